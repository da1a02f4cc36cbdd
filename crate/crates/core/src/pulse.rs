//! Band-basis unitaries for instantaneous lattice displacements and free
//! evolution at fixed quasi-momentum, composed into single-step, square,
//! and Gaussian displacement pulses.
//!
//! An abrupt lattice displacement conserves quasi-momentum; in the
//! plane-wave basis it is the diagonal phase e^{-i (q + 2m) pi dx} with dx
//! in units of the lattice spacing. All operators here act within a single
//! quasi-momentum block; band truncation happens only at readout.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::BlochSolution;

const FWHM_TO_SIGMA: f64 = 2.354_820_045_030_949_4; // 2 sqrt(2 ln 2)

/// Default time step for the discretized Gaussian pulse, in seconds.
pub const DEFAULT_GAUSSIAN_STEP_S: f64 = 5e-6;
/// Default truncation half-width of the Gaussian pulse, in units of sigma_t.
pub const DEFAULT_GAUSSIAN_TRUNCATION_SIGMAS: f64 = 2.5;

/// One of the three displacement-pulse families.
///
/// Amplitudes are in units of the lattice spacing a; temporal widths are
/// scaled by the mean two-band splitting period T12 of the lattice the
/// pulse is applied to.
#[derive(Clone, Debug, PartialEq)]
pub enum PulseSpec {
    /// A single abrupt lattice displacement.
    SingleStep { amplitude: f64 },
    /// Displacement, delay, displacement in the opposite direction.
    Square { amplitude: f64, delay_scaled: f64 },
    /// Lattice position follows A exp(-(t - t_c)^2 / (2 sigma_t^2)) in
    /// piecewise-constant steps of `step_dt_s`, truncated at
    /// +-`truncation_sigmas` sigma_t and returning to net zero displacement.
    Gaussian {
        amplitude: f64,
        fwhm_scaled: f64,
        step_dt_s: f64,
        truncation_sigmas: f64,
    },
}

impl PulseSpec {
    pub fn single_step(amplitude: f64) -> Self {
        PulseSpec::SingleStep { amplitude }
    }

    pub fn square(amplitude: f64, delay_scaled: f64) -> Self {
        PulseSpec::Square { amplitude, delay_scaled }
    }

    pub fn gaussian(amplitude: f64, fwhm_scaled: f64) -> Self {
        PulseSpec::Gaussian {
            amplitude,
            fwhm_scaled,
            step_dt_s: DEFAULT_GAUSSIAN_STEP_S,
            truncation_sigmas: DEFAULT_GAUSSIAN_TRUNCATION_SIGMAS,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            PulseSpec::SingleStep { .. } => "single_step",
            PulseSpec::Square { .. } => "square",
            PulseSpec::Gaussian { .. } => "gaussian",
        }
    }

    /// Spatial amplitude in units of a.
    pub fn amplitude(&self) -> f64 {
        match *self {
            PulseSpec::SingleStep { amplitude } => amplitude,
            PulseSpec::Square { amplitude, .. } => amplitude,
            PulseSpec::Gaussian { amplitude, .. } => amplitude,
        }
    }

    /// Temporal parameter in units of T12 (delay or FWHM), if any.
    pub fn width_scaled(&self) -> Option<f64> {
        match *self {
            PulseSpec::SingleStep { .. } => None,
            PulseSpec::Square { delay_scaled, .. } => Some(delay_scaled),
            PulseSpec::Gaussian { fwhm_scaled, .. } => Some(fwhm_scaled),
        }
    }

    /// Same family, different spatial amplitude.
    pub fn with_amplitude(&self, amplitude: f64) -> Self {
        let mut spec = self.clone();
        match &mut spec {
            PulseSpec::SingleStep { amplitude: a } => *a = amplitude,
            PulseSpec::Square { amplitude: a, .. } => *a = amplitude,
            PulseSpec::Gaussian { amplitude: a, .. } => *a = amplitude,
        }
        spec
    }

    /// Same family, different temporal parameter. No-op for single-step.
    pub fn with_width(&self, width: f64) -> Self {
        let mut spec = self.clone();
        match &mut spec {
            PulseSpec::SingleStep { .. } => {}
            PulseSpec::Square { delay_scaled, .. } => *delay_scaled = width,
            PulseSpec::Gaussian { fwhm_scaled, .. } => *fwhm_scaled = width,
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.amplitude();
        if !a.is_finite() || a.abs() > 0.5 {
            return Err(Error::InvalidInput(format!(
                "pulse amplitude must lie in [-0.5, 0.5] a (displacements beyond a/2 repeat modulo a), got {a}"
            )));
        }
        match *self {
            PulseSpec::SingleStep { .. } => {}
            PulseSpec::Square { delay_scaled, .. } => {
                if !(delay_scaled.is_finite() && delay_scaled > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "square pulse delay_scaled must be > 0, got {delay_scaled}"
                    )));
                }
            }
            PulseSpec::Gaussian { fwhm_scaled, step_dt_s, truncation_sigmas, .. } => {
                if !(fwhm_scaled.is_finite() && fwhm_scaled > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "gaussian pulse fwhm_scaled must be > 0, got {fwhm_scaled}"
                    )));
                }
                if !(step_dt_s.is_finite() && step_dt_s > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "gaussian pulse step_dt_s must be > 0, got {step_dt_s}"
                    )));
                }
                if !(truncation_sigmas.is_finite() && truncation_sigmas > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "gaussian pulse truncation_sigmas must be > 0, got {truncation_sigmas}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Wall-clock duration of the pulse for a given T12, in seconds.
    /// Single-step pulses are instantaneous.
    pub fn duration_s(&self, t12_s: f64) -> f64 {
        match *self {
            PulseSpec::SingleStep { .. } => 0.0,
            PulseSpec::Square { delay_scaled, .. } => delay_scaled * t12_s,
            PulseSpec::Gaussian { .. } => {
                let steps = self.gaussian_steps(t12_s).map(|s| s.len()).unwrap_or(0);
                steps as f64 * self.gaussian_step_dt()
            }
        }
    }

    fn gaussian_step_dt(&self) -> f64 {
        match *self {
            PulseSpec::Gaussian { step_dt_s, .. } => step_dt_s,
            _ => 0.0,
        }
    }

    /// Piecewise-constant lattice positions for the Gaussian pulse, one per
    /// time step, sampled at step midpoints.
    fn gaussian_steps(&self, t12_s: f64) -> Option<Vec<f64>> {
        match *self {
            PulseSpec::Gaussian { amplitude, fwhm_scaled, step_dt_s, truncation_sigmas } => {
                let sigma_t = fwhm_scaled * t12_s / FWHM_TO_SIGMA;
                let half = truncation_sigmas * sigma_t;
                let n = ((2.0 * half / step_dt_s).round() as usize).max(1);
                let window = n as f64 * step_dt_s;
                Some(
                    (0..n)
                        .map(|j| {
                            let t = (j as f64 + 0.5) * step_dt_s - 0.5 * window;
                            amplitude * (-t * t / (2.0 * sigma_t * sigma_t)).exp()
                        })
                        .collect(),
                )
            }
            _ => None,
        }
    }
}

/// Band amplitudes of a state at fixed quasi-momentum.
#[derive(Clone, Debug)]
pub struct BandAmplitudes {
    pub q: f64,
    pub amps: DVector<Complex64>,
}

impl BandAmplitudes {
    /// State fully in one 1-based band.
    pub fn band_state(sol: &BlochSolution, band: usize) -> Self {
        let mut amps = DVector::zeros(sol.num_bands());
        amps[band - 1] = Complex64::new(1.0, 0.0);
        BandAmplitudes { q: sol.q(), amps }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }
}

/// Band-basis matrix of the displacement operator for a shift `dx` in units
/// of the lattice spacing: entry (n, m) = sum_k c*_{n,k} c_{m,k}
/// e^{-i (q + 2k) pi dx}. The top-left block of a unitary.
pub fn displacement_matrix(sol: &BlochSolution, dx: f64) -> DMatrix<Complex64> {
    let dim = sol.basis_len();
    let bands = sol.num_bands();
    let c = sol.coefficients();
    let mut phased = DMatrix::<Complex64>::zeros(dim, bands);
    for k in 0..dim {
        let phase = Complex64::from_polar(1.0, -PI * sol.plane_wave_momentum(k) * dx);
        for b in 0..bands {
            phased[(k, b)] = phase * c[(k, b)];
        }
    }
    c.adjoint() * phased
}

/// Diagonal of the free-evolution operator over `t_s` seconds:
/// e^{-i E_n t / hbar} = e^{-2 pi i E_n[E_R] f_R t}.
pub fn free_evolution(sol: &BlochSolution, t_s: f64) -> DVector<Complex64> {
    let omega_scale = 2.0 * PI * sol.recoil_frequency();
    DVector::from_iterator(
        sol.num_bands(),
        sol.energies().iter().map(|&e| Complex64::from_polar(1.0, -omega_scale * e * t_s)),
    )
}

/// Band-basis matrix of the whole pulse at this quasi-momentum.
///
/// `t12_s` is the mean splitting period used to convert scaled temporal
/// parameters to seconds; it comes from the lattice configuration the pulse
/// hardware is tuned to (the ensemble center in echo runs).
pub fn pulse_matrix(spec: &PulseSpec, sol: &BlochSolution, t12_s: f64) -> Result<DMatrix<Complex64>> {
    spec.validate()?;
    let bands = sol.num_bands();
    match spec {
        PulseSpec::SingleStep { amplitude } => Ok(displacement_matrix(sol, *amplitude)),
        PulseSpec::Square { amplitude, delay_scaled } => {
            let forward = displacement_matrix(sol, *amplitude);
            let phases = free_evolution(sol, delay_scaled * t12_s);
            let back = displacement_matrix(sol, -*amplitude);
            let mut evolved = forward;
            for n in 0..bands {
                for m in 0..bands {
                    evolved[(n, m)] *= phases[n];
                }
            }
            Ok(back * evolved)
        }
        PulseSpec::Gaussian { step_dt_s, .. } => {
            let positions = spec.gaussian_steps(t12_s).expect("gaussian spec");
            let phases = free_evolution(sol, *step_dt_s);
            let mut matrix = DMatrix::<Complex64>::identity(bands, bands);
            let mut pos = 0.0;
            for &x in &positions {
                let step = displacement_matrix(sol, x - pos);
                matrix = step * matrix;
                for n in 0..bands {
                    for m in 0..bands {
                        matrix[(n, m)] *= phases[n];
                    }
                }
                pos = x;
            }
            Ok(displacement_matrix(sol, -pos) * matrix)
        }
    }
}

/// Apply a pulse to band amplitudes at the same quasi-momentum.
pub fn apply_pulse(
    spec: &PulseSpec,
    sol: &BlochSolution,
    input: &BandAmplitudes,
    t12_s: f64,
) -> Result<BandAmplitudes> {
    if input.amps.len() != sol.num_bands() {
        return Err(Error::InvalidInput(format!(
            "input has {} band amplitudes, solution retains {} bands",
            input.amps.len(),
            sol.num_bands()
        )));
    }
    if (input.q - sol.q()).abs() > 1e-12 {
        return Err(Error::InvalidInput(format!(
            "input quasi-momentum {} does not match solution {}",
            input.q,
            sol.q()
        )));
    }
    if input.norm_sqr() > 1.0 + 1e-9 {
        return Err(Error::InvalidInput(format!(
            "input squared norm {} exceeds 1",
            input.norm_sqr()
        )));
    }
    let matrix = pulse_matrix(spec, sol, t12_s)?;
    Ok(BandAmplitudes { q: input.q, amps: matrix * &input.amps })
}

/// Flat, real-coefficient kernel for the hot loops: applies displacements
/// and free evolution to band-amplitude vectors without building band-basis
/// matrices. Coefficients of the Bloch solutions are real, which halves the
/// work of the plane-wave sandwich C^T diag(phase) C.
pub(crate) struct PulseKernel {
    /// Column-major (2M+1) x bands real coefficients.
    coeff: Vec<f64>,
    dim: usize,
    bands: usize,
    /// Plane-wave momenta q + 2(k - M).
    momenta: Vec<f64>,
    energies: Vec<f64>,
    omega_scale: f64,
    scratch_re: Vec<f64>,
    scratch_im: Vec<f64>,
}

impl PulseKernel {
    pub fn new(sol: &BlochSolution) -> Self {
        let dim = sol.basis_len();
        let bands = sol.num_bands();
        let mut coeff = vec![0.0; dim * bands];
        for b in 0..bands {
            for k in 0..dim {
                coeff[b * dim + k] = sol.coefficients()[(k, b)].re;
            }
        }
        let momenta = (0..dim).map(|k| sol.plane_wave_momentum(k)).collect();
        PulseKernel {
            coeff,
            dim,
            bands,
            momenta,
            energies: sol.energies().to_vec(),
            omega_scale: 2.0 * PI * sol.recoil_frequency(),
            scratch_re: vec![0.0; dim],
            scratch_im: vec![0.0; dim],
        }
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// v <- D(dx) v in the band basis.
    pub fn displace(&mut self, v: &mut [Complex64], dx: f64) {
        debug_assert_eq!(v.len(), self.bands);
        let (re, im) = (&mut self.scratch_re, &mut self.scratch_im);
        re.iter_mut().for_each(|x| *x = 0.0);
        im.iter_mut().for_each(|x| *x = 0.0);
        for b in 0..self.bands {
            let col = &self.coeff[b * self.dim..(b + 1) * self.dim];
            let (vr, vi) = (v[b].re, v[b].im);
            if vr == 0.0 && vi == 0.0 {
                continue;
            }
            for k in 0..self.dim {
                re[k] += col[k] * vr;
                im[k] += col[k] * vi;
            }
        }
        for k in 0..self.dim {
            let (s, c) = (-PI * self.momenta[k] * dx).sin_cos();
            let (r, i) = (re[k], im[k]);
            re[k] = r * c - i * s;
            im[k] = r * s + i * c;
        }
        for b in 0..self.bands {
            let col = &self.coeff[b * self.dim..(b + 1) * self.dim];
            let mut ar = 0.0;
            let mut ai = 0.0;
            for k in 0..self.dim {
                ar += col[k] * re[k];
                ai += col[k] * im[k];
            }
            v[b] = Complex64::new(ar, ai);
        }
    }

    /// v <- U(t) v, free evolution over t seconds.
    pub fn evolve(&self, v: &mut [Complex64], t_s: f64) {
        for (b, amp) in v.iter_mut().enumerate() {
            let (s, c) = (-self.omega_scale * self.energies[b] * t_s).sin_cos();
            *amp *= Complex64::new(c, s);
        }
    }

    /// v <- O v for the whole pulse.
    pub fn apply_pulse(&mut self, spec: &PulseSpec, v: &mut [Complex64], t12_s: f64) {
        match spec {
            PulseSpec::SingleStep { amplitude } => self.displace(v, *amplitude),
            PulseSpec::Square { amplitude, delay_scaled } => {
                self.displace(v, *amplitude);
                self.evolve(v, delay_scaled * t12_s);
                self.displace(v, -*amplitude);
            }
            PulseSpec::Gaussian { step_dt_s, .. } => {
                let positions = spec.gaussian_steps(t12_s).expect("gaussian spec");
                let mut pos = 0.0;
                for &x in &positions {
                    self.displace(v, x - pos);
                    self.evolve(v, *step_dt_s);
                    pos = x;
                }
                self.displace(v, -pos);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{solve_bands, solve_bands_with_retention, LatticeConfig};
    use approx::assert_abs_diff_eq;

    fn sol18(q: f64) -> BlochSolution {
        solve_bands(&LatticeConfig::with_depth(18.0), q).unwrap()
    }

    #[test]
    fn zero_displacement_is_identity() {
        let sol = sol18(0.23);
        let d = displacement_matrix(&sol, 0.0);
        for n in 0..sol.num_bands() {
            for m in 0..sol.num_bands() {
                let expected = if n == m { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(d[(n, m)].norm(), expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn full_period_displacement_is_identity_up_to_global_phase() {
        let sol = sol18(0.41);
        let d = displacement_matrix(&sol, 1.0);
        for n in 0..sol.num_bands() {
            for m in 0..sol.num_bands() {
                let expected = if n == m { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(d[(n, m)].norm(), expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn displacement_composition_in_full_basis() {
        let config = LatticeConfig::with_depth(18.0);
        let dim = 2 * config.num_plane_waves + 1;
        let sol = solve_bands_with_retention(&config, 0.3, dim).unwrap();
        let d1 = displacement_matrix(&sol, 0.11);
        let d2 = displacement_matrix(&sol, 0.17);
        let d12 = displacement_matrix(&sol, 0.28);
        let product = d1 * d2;
        let diff = (&product - &d12).map(|z| z.norm()).max();
        assert!(diff < 1e-10, "max entry difference {diff:.2e}");
    }

    #[test]
    fn free_evolution_identity_and_semigroup() {
        let sol = sol18(0.1);
        let u0 = free_evolution(&sol, 0.0);
        for n in 0..sol.num_bands() {
            assert_abs_diff_eq!((u0[n] - Complex64::new(1.0, 0.0)).norm(), 0.0, epsilon = 1e-14);
        }
        let t = 137e-6;
        let u_half = free_evolution(&sol, t / 2.0);
        let u_full = free_evolution(&sol, t);
        for n in 0..sol.num_bands() {
            assert!((u_half[n] * u_half[n] - u_full[n]).norm() < 1e-12);
        }
    }

    #[test]
    fn free_evolution_splitting_period_restores_relative_phase() {
        let sol = sol18(0.3);
        let t = 1.0 / (sol.recoil_frequency() * (sol.energy(2) - sol.energy(1)));
        let u = free_evolution(&sol, t);
        let rel = u[1] / u[0];
        assert!((rel - Complex64::new(1.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn zero_amplitude_pulses_act_as_identity_up_to_global_phase() {
        let sol = sol18(0.2);
        let t12 = 200e-6;
        let input = BandAmplitudes::band_state(&sol, 1);
        for spec in [
            PulseSpec::single_step(0.0),
            PulseSpec::square(0.0, 0.35),
            PulseSpec::gaussian(0.0, 0.3),
        ] {
            let out = apply_pulse(&spec, &sol, &input, t12).unwrap();
            // Global phase only: every band population unchanged.
            assert_abs_diff_eq!(out.amps[0].norm(), 1.0, epsilon = 1e-12);
            for b in 1..sol.num_bands() {
                assert!(out.amps[b].norm() < 1e-12);
            }
        }
    }

    #[test]
    fn pulse_validation_errors() {
        assert!(PulseSpec::single_step(0.7).validate().is_err());
        assert!(PulseSpec::square(0.1, 0.0).validate().is_err());
        assert!(PulseSpec::gaussian(0.1, -0.2).validate().is_err());
        let bad_dt = PulseSpec::Gaussian {
            amplitude: 0.1,
            fwhm_scaled: 0.3,
            step_dt_s: 0.0,
            truncation_sigmas: 2.5,
        };
        assert!(bad_dt.validate().is_err());
    }

    #[test]
    fn apply_pulse_rejects_mismatched_input() {
        let sol = sol18(0.0);
        let other = sol18(0.5);
        let input = BandAmplitudes::band_state(&other, 1);
        assert!(apply_pulse(&PulseSpec::single_step(0.1), &sol, &input, 200e-6).is_err());
    }

    #[test]
    fn pulses_preserve_norm_before_truncation() {
        // With full retention the composed pulse is unitary, so the norm of
        // any state is preserved to roundoff.
        let config = LatticeConfig::with_depth(18.0);
        let dim = 2 * config.num_plane_waves + 1;
        let sol = solve_bands_with_retention(&config, 0.27, dim).unwrap();
        let t12 = 200e-6;
        let mut input = BandAmplitudes::band_state(&sol, 1);
        input.amps[1] = Complex64::new(0.6, 0.0);
        input.amps[0] = Complex64::new(0.8, 0.0);
        for spec in [
            PulseSpec::single_step(0.25),
            PulseSpec::square(0.154, 0.35),
            PulseSpec::gaussian(0.186, 0.294),
        ] {
            let out = apply_pulse(&spec, &sol, &input, t12).unwrap();
            assert_abs_diff_eq!(out.norm_sqr(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn kernel_matches_matrix_path() {
        let sol = sol18(0.17);
        let t12 = 200e-6;
        for spec in [
            PulseSpec::single_step(0.21),
            PulseSpec::square(0.16, 0.42),
            PulseSpec::gaussian(0.19, 0.3),
        ] {
            let matrix = pulse_matrix(&spec, &sol, t12).unwrap();
            let mut kernel = PulseKernel::new(&sol);
            for band in 0..2 {
                let mut v = vec![Complex64::new(0.0, 0.0); sol.num_bands()];
                v[band] = Complex64::new(1.0, 0.0);
                kernel.apply_pulse(&spec, &mut v, t12);
                for n in 0..sol.num_bands() {
                    assert!((v[n] - matrix[(n, band)]).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn unitarity_of_composed_pulses_at_20_band_cutoff() {
        // Raising the readout truncation to 20 bands makes the composed
        // pulse unitary on the physically occupied block to 1e-6.
        let config = LatticeConfig::with_depth(18.0);
        let sol = solve_bands_with_retention(&config, 0.33, 20).unwrap();
        let t12 = 200e-6;
        for spec in [
            PulseSpec::single_step(0.25),
            PulseSpec::square(0.154, 0.35),
            PulseSpec::gaussian(0.186, 0.294),
        ] {
            let u = pulse_matrix(&spec, &sol, t12).unwrap();
            let gram = u.adjoint() * &u;
            for n in 0..7 {
                for m in 0..7 {
                    let expected = if n == m { 1.0 } else { 0.0 };
                    let defect = (gram[(n, m)] - Complex64::new(expected, 0.0)).norm();
                    assert!(defect < 1e-6, "{} gram defect {defect:.2e}", spec.kind_name());
                }
            }
        }
    }
}
