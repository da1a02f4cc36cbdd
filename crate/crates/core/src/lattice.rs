//! Plane-wave solver for the periodic lattice Hamiltonian
//! `H = P^2/2m + U0 cos^2(k_L x)` with `U0 = s E_R`, and the derived
//! quantities built on top of it: band structure over the Brillouin zone,
//! mean two-band splitting period, Wannier functions, and Landau-Zener
//! tunneling lifetimes in the gravity-tilted lattice.
//!
//! Units: energies in recoil energies `E_R`, quasi-momentum in units of the
//! lattice vector `k_L` (the Brillouin zone is `[-1, 1)`), lengths in units
//! of the lattice spacing `a = pi/k_L`, times in seconds.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical constants and basis cutoffs defining the lattice Hamiltonian.
///
/// `depth_s` is the dimensionless depth (`U0 = depth_s * E_R`);
/// `recoil_frequency` is `E_R/h` in Hz. The spacing is derived from the
/// laser wavelength and beam intersection angle and must stay consistent
/// with them (checked by [`LatticeConfig::validate`]).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatticeConfig {
    /// Dimensionless lattice depth s (U0 = s E_R).
    pub depth_s: f64,
    /// E_R / h in Hz.
    pub recoil_frequency: f64,
    /// Laser wavelength in nm.
    pub wavelength_nm: f64,
    /// Beam intersection angle theta in degrees.
    pub beam_angle_deg: f64,
    /// Lattice spacing a = pi / k_L in meters.
    pub lattice_spacing_m: f64,
    /// Gravitational tilt per lattice site, in E_R.
    pub tilt_per_site: f64,
    /// Plane-wave cutoff M: coefficients cover reciprocal indices -M..=M.
    pub num_plane_waves: usize,
    /// Number of bands retained from each diagonalization.
    pub num_bands: usize,
    /// Uniform Brillouin-zone grid size used for q-averages.
    pub q_grid_points: usize,
}

fn spacing_from_beams(wavelength_nm: f64, beam_angle_deg: f64) -> f64 {
    let k_l = 2.0 * PI / (wavelength_nm * 1e-9) * (beam_angle_deg.to_radians() / 2.0).sin();
    PI / k_l
}

impl Default for LatticeConfig {
    fn default() -> Self {
        let wavelength_nm = 780.0;
        let beam_angle_deg = 49.6;
        Self {
            depth_s: 18.0,
            recoil_frequency: 685.0,
            wavelength_nm,
            beam_angle_deg,
            lattice_spacing_m: spacing_from_beams(wavelength_nm, beam_angle_deg),
            tilt_per_site: 2.86,
            num_plane_waves: 15,
            num_bands: 7,
            q_grid_points: 64,
        }
    }
}

impl LatticeConfig {
    /// Default configuration at the given depth.
    pub fn with_depth(depth_s: f64) -> Self {
        Self { depth_s, ..Self::default() }
    }

    /// Lattice vector k_L in 1/m, from wavelength and beam angle.
    pub fn lattice_vector(&self) -> f64 {
        2.0 * PI / (self.wavelength_nm * 1e-9) * (self.beam_angle_deg.to_radians() / 2.0).sin()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.depth_s.is_finite() || self.depth_s < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "lattice.depth_s must be >= 0, got {}",
                self.depth_s
            )));
        }
        if !(self.recoil_frequency.is_finite() && self.recoil_frequency > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lattice.recoil_frequency must be > 0 Hz, got {}",
                self.recoil_frequency
            )));
        }
        if !(self.wavelength_nm.is_finite() && self.wavelength_nm > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lattice.wavelength_nm must be > 0, got {}",
                self.wavelength_nm
            )));
        }
        if !(self.beam_angle_deg > 0.0 && self.beam_angle_deg < 180.0) {
            return Err(Error::InvalidConfig(format!(
                "lattice.beam_angle_deg must lie in (0, 180), got {}",
                self.beam_angle_deg
            )));
        }
        if self.num_bands < 2 || self.num_plane_waves < self.num_bands {
            return Err(Error::InvalidConfig(format!(
                "lattice basis requires num_plane_waves >= num_bands >= 2, got M = {}, bands = {}",
                self.num_plane_waves, self.num_bands
            )));
        }
        if self.q_grid_points < 2 {
            return Err(Error::InvalidConfig(format!(
                "lattice.q_grid_points must be >= 2, got {}",
                self.q_grid_points
            )));
        }
        let derived = spacing_from_beams(self.wavelength_nm, self.beam_angle_deg);
        let rel = (self.lattice_spacing_m - derived).abs() / derived;
        if !(self.lattice_spacing_m > 0.0) || rel > 0.01 {
            return Err(Error::InvalidConfig(format!(
                "lattice.lattice_spacing_m = {:.4e} inconsistent with pi/k_L = {:.4e} (relative error {:.2e} > 1e-2)",
                self.lattice_spacing_m, derived, rel
            )));
        }
        Ok(())
    }
}

/// Bloch eigensolution at one quasi-momentum: the lowest retained bands'
/// energies (in E_R, ascending) and plane-wave coefficient vectors over
/// reciprocal indices m = -M..=M, with the phase fixed so that the
/// largest-magnitude coefficient is real and positive.
#[derive(Clone, Debug)]
pub struct BlochSolution {
    q: f64,
    energies: Vec<f64>,
    /// (2M+1) x num_bands; column n holds band n+1's coefficients.
    coefficients: DMatrix<Complex64>,
    recoil_frequency: f64,
}

impl BlochSolution {
    /// Quasi-momentum in units of k_L.
    pub fn q(&self) -> f64 {
        self.q
    }

    /// Band energies in E_R, ascending.
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Energy of a 1-based band index.
    pub fn energy(&self, band: usize) -> f64 {
        self.energies[band - 1]
    }

    /// Plane-wave coefficients, one column per retained band.
    pub fn coefficients(&self) -> &DMatrix<Complex64> {
        &self.coefficients
    }

    pub fn num_bands(&self) -> usize {
        self.energies.len()
    }

    /// Number of plane-wave coefficients, 2M+1.
    pub fn basis_len(&self) -> usize {
        self.coefficients.nrows()
    }

    /// E_R / h in Hz, carried over from the configuration.
    pub fn recoil_frequency(&self) -> f64 {
        self.recoil_frequency
    }

    /// Momentum of plane-wave component k (row index), in units of k_L:
    /// q + 2(k - M).
    pub fn plane_wave_momentum(&self, k: usize) -> f64 {
        let m = (self.basis_len() - 1) / 2;
        self.q + 2.0 * (k as f64 - m as f64)
    }
}

/// Band solutions on a uniform Brillouin-zone grid covering [-1, 1) once.
#[derive(Clone, Debug)]
pub struct BandStructure {
    q_grid: Vec<f64>,
    solutions: Vec<BlochSolution>,
}

impl BandStructure {
    pub fn q_grid(&self) -> &[f64] {
        &self.q_grid
    }

    pub fn solutions(&self) -> &[BlochSolution] {
        &self.solutions
    }

    /// Energies of a 1-based band across the grid.
    pub fn band_energies(&self, band: usize) -> Vec<f64> {
        self.solutions.iter().map(|s| s.energy(band)).collect()
    }

    /// max - min of a band over the zone.
    pub fn band_width(&self, band: usize) -> f64 {
        let es = self.band_energies(band);
        let max = es.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = es.iter().cloned().fold(f64::INFINITY, f64::min);
        max - min
    }

    /// Smallest direct gap E_{band+1}(q) - E_band(q) over the grid.
    pub fn min_direct_gap(&self, band: usize) -> f64 {
        self.solutions
            .iter()
            .map(|s| s.energy(band + 1) - s.energy(band))
            .fold(f64::INFINITY, f64::min)
    }

    /// Mean E_2(q) - E_1(q) over the grid, in E_R.
    pub fn mean_splitting_er(&self) -> f64 {
        let sum: f64 = self.solutions.iter().map(|s| s.energy(2) - s.energy(1)).sum();
        sum / self.solutions.len() as f64
    }
}

/// Solve the plane-wave Hamiltonian at one quasi-momentum, retaining
/// `config.num_bands` bands.
///
/// In E_R units the matrix over reciprocal indices m = -M..=M is
/// diagonal `(q + 2m)^2 + s/2` with off-diagonal `s/4` from
/// `cos^2(k_L x) = 1/2 + (e^{2ik_Lx} + e^{-2ik_Lx})/4`.
pub fn solve_bands(config: &LatticeConfig, q: f64) -> Result<BlochSolution> {
    config.validate()?;
    solve_bands_with_retention(config, q, config.num_bands)
}

/// Like [`solve_bands`] but retaining an explicit number of bands, up to the
/// full basis dimension 2M+1. Full retention makes the band-basis
/// displacement operator exactly unitary, which the operator-algebra checks
/// rely on; physics runs use the configured `num_bands`.
pub fn solve_bands_with_retention(
    config: &LatticeConfig,
    q: f64,
    retained: usize,
) -> Result<BlochSolution> {
    if !(q.is_finite() && q.abs() <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "quasi-momentum must satisfy |q| <= 1 k_L, got {q}"
        )));
    }
    let m = config.num_plane_waves;
    let dim = 2 * m + 1;
    if retained < 2 || retained > dim {
        return Err(Error::InvalidInput(format!(
            "retained bands must lie in 2..={dim}, got {retained}"
        )));
    }
    let s = config.depth_s;
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for k in 0..dim {
        let recip = k as f64 - m as f64;
        h[(k, k)] = (q + 2.0 * recip).powi(2) + 0.5 * s;
        if k + 1 < dim {
            h[(k, k + 1)] = 0.25 * s;
            h[(k + 1, k)] = 0.25 * s;
        }
    }
    let eig = SymmetricEigen::try_new(h, f64::EPSILON, 10_000).ok_or(Error::EigensolverFailed {
        q,
        depth_s: s,
    })?;

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());

    let mut energies = Vec::with_capacity(retained);
    let mut coefficients = DMatrix::<Complex64>::zeros(dim, retained);
    for (band, &src) in order.iter().take(retained).enumerate() {
        energies.push(eig.eigenvalues[src]);
        let col = eig.eigenvectors.column(src);
        // Phase convention: largest-|coefficient| entry real positive,
        // ties broken by the lowest reciprocal index.
        let mut k_star = 0;
        for k in 1..dim {
            if col[k].abs() > col[k_star].abs() {
                k_star = k;
            }
        }
        let sign = if col[k_star] < 0.0 { -1.0 } else { 1.0 };
        for k in 0..dim {
            coefficients[(k, band)] = Complex64::new(sign * col[k], 0.0);
        }
    }

    for band in 0..retained {
        let norm = coefficients.column(band).norm();
        debug_assert!((norm - 1.0).abs() < 1e-10, "eigenvector norm {norm}");
        if band + 1 < retained {
            debug_assert!(energies[band + 1] >= energies[band] - 1e-12);
        }
    }

    Ok(BlochSolution {
        q,
        energies,
        coefficients,
        recoil_frequency: config.recoil_frequency,
    })
}

/// Band structure on a uniform n_q-point grid over [-1, 1).
pub fn band_structure(config: &LatticeConfig, n_q: usize) -> Result<BandStructure> {
    config.validate()?;
    if n_q < 2 {
        return Err(Error::InvalidInput(format!("q-grid needs >= 2 points, got {n_q}")));
    }
    let q_grid: Vec<f64> = (0..n_q).map(|j| -1.0 + 2.0 * j as f64 / n_q as f64).collect();
    let solutions = q_grid
        .par_iter()
        .map(|&q| solve_bands_with_retention(config, q, config.num_bands))
        .collect::<Result<Vec<_>>>()?;
    Ok(BandStructure { q_grid, solutions })
}

/// Mean oscillation period between the lowest two bands:
/// h divided by the q-averaged splitting, in seconds.
pub fn mean_splitting_period(config: &LatticeConfig) -> Result<f64> {
    let bands = band_structure(config, config.q_grid_points)?;
    Ok(1.0 / (config.recoil_frequency * bands.mean_splitting_er()))
}

/// Wannier function of a 1-based band at lattice site `site`, sampled on a
/// uniform `x_grid` (units of the lattice spacing a, measured from the
/// center of the site-0 potential well) and normalized on that grid.
///
/// Built by q-integration of the Bloch functions with site phase
/// e^{-i q l a}. The Bloch-function gauge is re-referenced to the well
/// center before integrating, so the result is localized in the well
/// even though the Hamiltonian is written with the cos^2 convention
/// (whose minima sit at half-integer multiples of a).
pub fn wannier(
    config: &LatticeConfig,
    band: usize,
    site: i64,
    x_grid: &[f64],
) -> Result<Vec<Complex64>> {
    config.validate()?;
    if band < 1 || band > config.num_bands {
        return Err(Error::InvalidInput(format!(
            "band must lie in 1..={}, got {band}",
            config.num_bands
        )));
    }
    if x_grid.len() < 2 {
        return Err(Error::GridTooCoarse("x-grid needs at least 2 points".into()));
    }
    let dx = x_grid[1] - x_grid[0];
    if !(dx > 0.0) {
        return Err(Error::InvalidInput("x-grid must be ascending and uniform".into()));
    }
    for w in x_grid.windows(2) {
        if ((w[1] - w[0]) - dx).abs() > 1e-9 * dx.max(1.0) {
            return Err(Error::InvalidInput("x-grid must be uniform".into()));
        }
    }
    if dx > 1.0 / 16.0 + 1e-12 {
        return Err(Error::GridTooCoarse(format!(
            "x-grid spacing {dx:.4} a exceeds a/16; fewer than 16 points per lattice period"
        )));
    }

    let bands = band_structure(config, config.q_grid_points)?;
    let m = config.num_plane_waves as i64;
    let dim = 2 * config.num_plane_waves + 1;

    let mut w = vec![Complex64::new(0.0, 0.0); x_grid.len()];
    let mut gauge = vec![0.0f64; dim];
    for sol in bands.solutions() {
        // Re-reference the gauge to the well center x0 = a/2: flip the sign
        // of every other coefficient (a half-period translation), then
        // re-apply the largest-coefficient-positive convention.
        let col = sol.coefficients().column(band - 1);
        for k in 0..dim {
            let flip = if (k as i64 - m).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            gauge[k] = flip * col[k].re;
        }
        let mut k_star = 0;
        for k in 1..dim {
            if gauge[k].abs() > gauge[k_star].abs() {
                k_star = k;
            }
        }
        if gauge[k_star] < 0.0 {
            gauge.iter_mut().for_each(|g| *g = -*g);
        }

        let site_phase = Complex64::from_polar(1.0, -PI * sol.q() * site as f64);
        for (xi, &x) in x_grid.iter().enumerate() {
            let mut u = Complex64::new(0.0, 0.0);
            for (k, &g) in gauge.iter().enumerate() {
                let momentum = sol.plane_wave_momentum(k);
                u += g * Complex64::from_polar(1.0, PI * momentum * x);
            }
            w[xi] += site_phase * u;
        }
    }

    let norm_sq: f64 = w.iter().map(|v| v.norm_sqr()).sum::<f64>() * dx;
    if norm_sq <= 0.0 {
        return Err(Error::InvalidInput("wannier function has zero norm on the grid".into()));
    }
    let scale = 1.0 / norm_sq.sqrt();
    Ok(w.into_iter().map(|v| v * scale).collect())
}

/// Landau-Zener escape rate and lifetime for the transition from 1-based
/// band `band` to `band + 1` under the gravitational tilt.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LandauZenerRate {
    /// 1-based index n of the decaying band (transition n -> n+1).
    pub band: usize,
    /// Smallest direct gap between bands n and n+1 over the zone, in E_R.
    pub gap_er: f64,
    /// Tunneling rate in Hz.
    pub rate_hz: f64,
    /// 1 / rate, in seconds.
    pub lifetime_s: f64,
}

/// Landau-Zener rates Gamma = nu_B exp(-pi^2 a E_G^2 / h^2 g n) for
/// transitions n -> n+1, n = 1..num_bands-1.
///
/// In lattice units the exponent reduces to pi^2 eps_G^2 / (8 delta n)
/// with eps_G the gap and delta the per-site tilt, both in E_R; the Bloch
/// frequency is nu_B = delta * recoil_frequency.
pub fn lz_lifetimes(config: &LatticeConfig) -> Result<Vec<LandauZenerRate>> {
    config.validate()?;
    if !(config.tilt_per_site > 0.0) {
        return Err(Error::InvalidInput(format!(
            "tilt_per_site must be > 0 for Landau-Zener rates, got {}",
            config.tilt_per_site
        )));
    }
    let bands = band_structure(config, config.q_grid_points)?;
    let delta = config.tilt_per_site;
    let bloch_hz = delta * config.recoil_frequency;
    let mut out = Vec::with_capacity(config.num_bands - 1);
    for n in 1..config.num_bands {
        let gap = bands.min_direct_gap(n);
        let rate = bloch_hz * (-PI.powi(2) * gap * gap / (8.0 * delta * n as f64)).exp();
        out.push(LandauZenerRate {
            band: n,
            gap_er: gap,
            rate_hz: rate,
            lifetime_s: 1.0 / rate,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn free_particle_energies_at_zone_center() {
        let config = LatticeConfig::with_depth(0.0);
        let sol = solve_bands(&config, 0.0).unwrap();
        let expected = [0.0, 4.0, 4.0, 16.0, 16.0, 36.0, 36.0];
        for (band, &e) in expected.iter().enumerate() {
            assert_abs_diff_eq!(sol.energies()[band], e, epsilon = 1e-10);
        }
    }

    #[test]
    fn free_particle_band_one_is_folded_parabola() {
        let config = LatticeConfig::with_depth(0.0);
        let bands = band_structure(&config, 32).unwrap();
        for sol in bands.solutions() {
            assert_abs_diff_eq!(sol.energy(1), sol.q() * sol.q(), epsilon = 1e-9);
        }
    }

    #[test]
    fn parity_symmetry_of_energies() {
        let config = LatticeConfig::with_depth(18.0);
        for q in [0.15, 0.4, 0.77, 1.0] {
            let plus = solve_bands(&config, q).unwrap();
            let minus = solve_bands(&config, -q).unwrap();
            for band in 1..=config.num_bands {
                assert_abs_diff_eq!(plus.energy(band), minus.energy(band), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn basis_convergence_doubling_m() {
        let coarse = LatticeConfig { num_plane_waves: 15, ..LatticeConfig::with_depth(18.0) };
        let fine = LatticeConfig { num_plane_waves: 30, ..coarse.clone() };
        let a = solve_bands(&coarse, 0.3).unwrap();
        let b = solve_bands(&fine, 0.3).unwrap();
        for band in 1..=3 {
            assert!((a.energy(band) - b.energy(band)).abs() < 1e-8);
        }
    }

    #[test]
    fn eigenvectors_orthonormal() {
        let config = LatticeConfig::with_depth(18.0);
        let sol = solve_bands(&config, 0.37).unwrap();
        let c = sol.coefficients();
        for i in 0..sol.num_bands() {
            for j in 0..sol.num_bands() {
                let dot = c.column(i).dotc(&c.column(j)).norm();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(dot, expected, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn parity_relates_coefficients_by_index_reversal() {
        let config = LatticeConfig::with_depth(18.0);
        let plus = solve_bands(&config, 0.31).unwrap();
        let minus = solve_bands(&config, -0.31).unwrap();
        let dim = plus.basis_len();
        for band in 0..plus.num_bands() {
            // Reversal can come back with either overall sign; align on the
            // largest entry before comparing.
            let a = plus.coefficients().column(band);
            let b = minus.coefficients().column(band);
            let mut k_star = 0;
            for k in 1..dim {
                if a[k].norm() > a[k_star].norm() {
                    k_star = k;
                }
            }
            let sign = (a[k_star].re * b[dim - 1 - k_star].re).signum();
            for k in 0..dim {
                assert_abs_diff_eq!(a[k].re, sign * b[dim - 1 - k].re, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn band_one_much_flatter_than_band_two_at_depth_18() {
        let config = LatticeConfig::with_depth(18.0);
        let bands = band_structure(&config, 64).unwrap();
        assert!(bands.band_width(1) < 0.05 * bands.band_width(2));
    }

    #[test]
    fn mean_splitting_periods_match_known_depths() {
        let t18 = mean_splitting_period(&LatticeConfig::with_depth(18.0)).unwrap();
        assert!((t18 - 200e-6).abs() / 200e-6 < 0.03, "T12(18) = {t18:.3e}");
        let t20 = mean_splitting_period(&LatticeConfig::with_depth(20.0)).unwrap();
        assert!((t20 - 188e-6).abs() / 188e-6 < 0.03, "T12(20) = {t20:.3e}");
    }

    #[test]
    fn deep_lattice_splitting_approaches_harmonic_limit() {
        // The splitting carries a depth-independent anharmonic offset of
        // -1 E_R (second-order in the quartic well correction), so the
        // relative deviation from 2 sqrt(s) E_R falls off as 1/(2 sqrt(s)).
        let harmonic_error = |s: f64, m: usize| {
            let config = LatticeConfig { num_plane_waves: m, ..LatticeConfig::with_depth(s) };
            let t = mean_splitting_period(&config).unwrap();
            let harmonic = 1.0 / (2.0 * s.sqrt() * config.recoil_frequency);
            (t - harmonic).abs() / harmonic
        };
        assert!(harmonic_error(1600.0, 30) < 0.02);
        assert!(harmonic_error(1600.0, 30) < harmonic_error(400.0, 25));
    }

    #[test]
    fn rejects_bad_configs_and_inputs() {
        let mut config = LatticeConfig::default();
        config.depth_s = -1.0;
        assert!(matches!(solve_bands(&config, 0.0), Err(Error::InvalidConfig(_))));

        let mut config = LatticeConfig::default();
        config.num_bands = 20; // > M
        assert!(matches!(solve_bands(&config, 0.0), Err(Error::InvalidConfig(_))));

        let mut config = LatticeConfig::default();
        config.lattice_spacing_m = 1.2e-6; // ~29% off pi/k_L
        assert!(matches!(solve_bands(&config, 0.0), Err(Error::InvalidConfig(_))));

        let config = LatticeConfig::default();
        assert!(matches!(solve_bands(&config, 1.5), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn wannier_translates_between_sites() {
        let config = LatticeConfig { q_grid_points: 32, ..LatticeConfig::with_depth(18.0) };
        let n = 257;
        let grid: Vec<f64> = (0..n).map(|i| -4.0 + 8.0 * i as f64 / (n - 1) as f64).collect();
        let shifted: Vec<f64> = grid.iter().map(|x| x + 1.0).collect();
        let w0 = wannier(&config, 1, 0, &grid).unwrap();
        let w1 = wannier(&config, 1, 1, &shifted).unwrap();
        for (a, b) in w0.iter().zip(w1.iter()) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn wannier_band_one_localized_in_central_well() {
        let config = LatticeConfig::with_depth(18.0);
        let n = 1025;
        let grid: Vec<f64> = (0..n).map(|i| -8.0 + 16.0 * i as f64 / (n - 1) as f64).collect();
        let w = wannier(&config, 1, 0, &grid).unwrap();
        let dx = grid[1] - grid[0];
        let inside: f64 = grid
            .iter()
            .zip(w.iter())
            .filter(|(x, _)| x.abs() < 0.5)
            .map(|(_, v)| v.norm_sqr() * dx)
            .sum();
        assert!(inside > 0.95, "weight inside central well = {inside:.4}");
    }

    #[test]
    fn wannier_bands_orthogonal_on_grid() {
        let config = LatticeConfig { q_grid_points: 32, ..LatticeConfig::with_depth(18.0) };
        let n = 1025;
        let grid: Vec<f64> = (0..n).map(|i| -8.0 + 16.0 * i as f64 / (n - 1) as f64).collect();
        let w1 = wannier(&config, 1, 0, &grid).unwrap();
        let w2 = wannier(&config, 2, 0, &grid).unwrap();
        let dx = grid[1] - grid[0];
        let overlap: Complex64 = w1.iter().zip(w2.iter()).map(|(a, b)| a.conj() * b).sum();
        assert!((overlap * dx).norm() < 1e-6);
    }

    #[test]
    fn wannier_rejects_coarse_grid() {
        let config = LatticeConfig::with_depth(18.0);
        let grid: Vec<f64> = (0..40).map(|i| -2.0 + 0.1 * i as f64).collect();
        assert!(matches!(wannier(&config, 1, 0, &grid), Err(Error::GridTooCoarse(_))));
    }

    #[test]
    fn lz_rates_match_known_values_at_depth_18() {
        let config = LatticeConfig::with_depth(18.0);
        let rates = lz_lifetimes(&config).unwrap();
        let r12 = &rates[0];
        let r34 = &rates[2];
        // n=1->2: order of magnitude around 4e-7 Hz
        assert!(r12.rate_hz > 4e-8 && r12.rate_hz < 4e-6, "rate12 = {:.3e}", r12.rate_hz);
        // n=3->4: lifetime 830 us within 10%
        assert!(
            (r34.lifetime_s - 830e-6).abs() / 830e-6 < 0.10,
            "lifetime34 = {:.3e}",
            r34.lifetime_s
        );
        // Escape accelerates up the ladder.
        for pair in rates.windows(2) {
            assert!(pair[1].rate_hz > pair[0].rate_hz);
        }
    }

    #[test]
    fn lz_rate_recomputes_from_reported_gap() {
        let config = LatticeConfig::with_depth(18.0);
        let rates = lz_lifetimes(&config).unwrap();
        for r in &rates {
            let expected = config.tilt_per_site
                * config.recoil_frequency
                * (-PI * PI * r.gap_er * r.gap_er
                    / (8.0 * config.tilt_per_site * r.band as f64))
                    .exp();
            assert_abs_diff_eq!(r.rate_hz, expected, epsilon = 1e-9 * expected);
            assert_abs_diff_eq!(r.lifetime_s * r.rate_hz, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn lz_requires_positive_tilt() {
        let config = LatticeConfig { tilt_per_site: 0.0, ..LatticeConfig::default() };
        assert!(matches!(lz_lifetimes(&config), Err(Error::InvalidInput(_))));
    }
}
