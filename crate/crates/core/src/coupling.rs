//! Brillouin-zone-averaged band-occupation probabilities after a pulse,
//! parameter sweeps, and grid-search optimization of pulse parameters per
//! lattice depth.
//!
//! The q-average is a uniform-grid mean over the zone; for periodic
//! integrands the uniform mean is the trapezoid rule.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{band_structure, mean_splitting_period, BandStructure, LatticeConfig};
use crate::pulse::{PulseKernel, PulseSpec};

/// q-averaged transfer probabilities for initial bands 1 and 2.
///
/// `p[i][j]` is the probability of ending in 1-based band j+1 starting from
/// band i+1; `loss_from[i]` is the weight outside the two bound bands,
/// 1 - P_{i->1} - P_{i->2}, which tunnels out of the tilted lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingResult {
    pub p: [Vec<f64>; 2],
    pub loss_from: [f64; 2],
}

impl CouplingResult {
    pub fn p11(&self) -> f64 {
        self.p[0][0]
    }

    pub fn p12(&self) -> f64 {
        self.p[0][1]
    }

    pub fn p21(&self) -> f64 {
        self.p[1][0]
    }

    pub fn p22(&self) -> f64 {
        self.p[1][1]
    }

    /// Probabilities from a 1-based initial band.
    pub fn from_band(&self, initial_band: usize) -> &[f64] {
        &self.p[initial_band - 1]
    }

    pub fn loss_from_band(&self, initial_band: usize) -> f64 {
        self.loss_from[initial_band - 1]
    }

    /// |P12 - P21|; reciprocity holds for every in-scope pulse.
    pub fn reciprocity_gap(&self) -> f64 {
        (self.p12() - self.p21()).abs()
    }
}

/// Probabilities for one quasi-momentum block: state columns for initial
/// bands 1 and 2 pushed through the pulse.
fn coupling_at_q(
    kernel: &mut PulseKernel,
    spec: &PulseSpec,
    t12_s: f64,
) -> ([Vec<f64>; 2], ()) {
    let bands = kernel.bands();
    let mut probs: [Vec<f64>; 2] = [vec![0.0; bands], vec![0.0; bands]];
    for init in 0..2 {
        let mut v = vec![Complex64::new(0.0, 0.0); bands];
        v[init] = Complex64::new(1.0, 0.0);
        kernel.apply_pulse(spec, &mut v, t12_s);
        for (j, amp) in v.iter().enumerate() {
            probs[init][j] = amp.norm_sqr();
        }
    }
    (probs, ())
}

/// q-average over precomputed band solutions. The per-q results are
/// reduced in grid order so the output does not depend on scheduling.
pub(crate) fn coupling_from_bands(
    bands: &BandStructure,
    spec: &PulseSpec,
    t12_s: f64,
) -> Result<CouplingResult> {
    spec.validate()?;
    let n_bands = bands.solutions()[0].num_bands();
    let per_q: Vec<[Vec<f64>; 2]> = bands
        .solutions()
        .par_iter()
        .map(|sol| {
            let mut kernel = PulseKernel::new(sol);
            coupling_at_q(&mut kernel, spec, t12_s).0
        })
        .collect();
    let n_q = per_q.len() as f64;
    let mut p: [Vec<f64>; 2] = [vec![0.0; n_bands], vec![0.0; n_bands]];
    for probs in &per_q {
        for init in 0..2 {
            for j in 0..n_bands {
                p[init][j] += probs[init][j];
            }
        }
    }
    for init in 0..2 {
        for j in 0..n_bands {
            p[init][j] /= n_q;
        }
    }
    let loss_from = [1.0 - p[0][0] - p[0][1], 1.0 - p[1][0] - p[1][1]];
    Ok(CouplingResult { p, loss_from })
}

/// q-averaged band-occupation probabilities after a pulse, for initial
/// bands 1 and 2 (Brillouin-zone mean of |<n,q| O |i,q>|^2).
pub fn coupling_probabilities(config: &LatticeConfig, spec: &PulseSpec) -> Result<CouplingResult> {
    let bands = band_structure(config, config.q_grid_points)?;
    let t12 = 1.0 / (config.recoil_frequency * bands.mean_splitting_er());
    coupling_from_bands(&bands, spec, t12)
}

/// One row of a displacement sweep.
#[derive(Clone, Debug)]
pub struct ScanPoint {
    pub dx: f64,
    pub result: CouplingResult,
}

/// Experimental displacement grid: steps of a/72 (a 5-degree relative
/// phase shift between the lattice beams), covering [0, a/2].
pub fn default_dx_grid() -> Vec<f64> {
    (0..=36).map(|j| j as f64 / 72.0).collect()
}

/// Sweep the spatial amplitude of a pulse family over `dx_grid`, holding
/// the temporal parameters of `template` fixed.
pub fn scan_displacement(
    config: &LatticeConfig,
    template: &PulseSpec,
    dx_grid: &[f64],
) -> Result<Vec<ScanPoint>> {
    if dx_grid.is_empty() {
        return Err(Error::EmptyGrid("displacement grid".into()));
    }
    for &dx in dx_grid {
        if !(0.0..=0.5).contains(&dx) {
            return Err(Error::InvalidInput(format!(
                "displacement grid must lie within [0, 0.5] a, got {dx}"
            )));
        }
    }
    let bands = band_structure(config, config.q_grid_points)?;
    let t12 = 1.0 / (config.recoil_frequency * bands.mean_splitting_er());
    dx_grid
        .par_iter()
        .map(|&dx| {
            let result = coupling_from_bands(&bands, &template.with_amplitude(dx), t12)?;
            Ok(ScanPoint { dx, result })
        })
        .collect()
}

/// One row of a delay sweep.
#[derive(Clone, Debug)]
pub struct DelayPoint {
    pub tau: f64,
    pub result: CouplingResult,
}

/// Sweep the scaled delay of a square pulse at fixed displacement.
pub fn scan_delay(config: &LatticeConfig, dx: f64, tau_grid: &[f64]) -> Result<Vec<DelayPoint>> {
    if tau_grid.is_empty() {
        return Err(Error::EmptyGrid("delay grid".into()));
    }
    for &tau in tau_grid {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::InvalidInput(format!("delay grid must be positive, got {tau}")));
        }
    }
    let bands = band_structure(config, config.q_grid_points)?;
    let t12 = 1.0 / (config.recoil_frequency * bands.mean_splitting_er());
    tau_grid
        .par_iter()
        .map(|&tau| {
            let result = coupling_from_bands(&bands, &PulseSpec::square(dx, tau), t12)?;
            Ok(DelayPoint { tau, result })
        })
        .collect()
}

/// Pulse family selector for optimization and depth scans.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PulseFamily {
    SingleStep,
    Square,
    Gaussian,
}

impl PulseFamily {
    pub const ALL: [PulseFamily; 3] = [PulseFamily::SingleStep, PulseFamily::Square, PulseFamily::Gaussian];

    pub fn name(self) -> &'static str {
        match self {
            PulseFamily::SingleStep => "single_step",
            PulseFamily::Square => "square",
            PulseFamily::Gaussian => "gaussian",
        }
    }

    fn spec(self, amplitude: f64, width: f64) -> PulseSpec {
        match self {
            PulseFamily::SingleStep => PulseSpec::single_step(amplitude),
            PulseFamily::Square => PulseSpec::square(amplitude, width),
            PulseFamily::Gaussian => PulseSpec::gaussian(amplitude, width),
        }
    }

    pub fn has_width(self) -> bool {
        self != PulseFamily::SingleStep
    }
}

/// Inclusive uniform grid for one search dimension.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn new(min: f64, max: f64, step: f64) -> Self {
        GridSpec { min, max, step }
    }

    pub fn points(&self) -> Vec<f64> {
        if !(self.step > 0.0) || self.max < self.min {
            return Vec::new();
        }
        let n = ((self.max - self.min) / self.step).round() as usize;
        (0..=n).map(|j| self.min + j as f64 * self.step).collect()
    }
}

/// Search grids for amplitude and (where applicable) temporal width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchGrids {
    pub amplitude: GridSpec,
    pub width: GridSpec,
    /// Refinement raises the resolution by this factor around the coarse
    /// optimum.
    pub refine_factor: usize,
}

impl SearchGrids {
    /// Coarse grids covering the in-scope parameter ranges: amplitude on
    /// the experimental a/72 steps over [0, a/2], delays and FWHMs spanning
    /// the first oscillation of the delay curve.
    pub fn defaults(family: PulseFamily) -> Self {
        let amplitude = GridSpec::new(0.0, 0.5, 1.0 / 72.0);
        let width = match family {
            PulseFamily::SingleStep => GridSpec::new(0.0, 0.0, 1.0),
            PulseFamily::Square => GridSpec::new(0.05, 1.0, 0.05),
            PulseFamily::Gaussian => GridSpec::new(0.05, 0.7, 0.05),
        };
        SearchGrids { amplitude, width, refine_factor: 10 }
    }
}

/// Result of a pulse-parameter optimization.
#[derive(Clone, Debug)]
pub struct OptimizedPulse {
    pub spec: PulseSpec,
    pub result: CouplingResult,
    /// Fine-grid resolution reached in amplitude.
    pub amplitude_resolution: f64,
    /// Fine-grid resolution reached in the temporal parameter, if any.
    pub width_resolution: Option<f64>,
}

fn better(
    candidate: (f64, f64, f64),
    best: (f64, f64, f64),
) -> bool {
    // (p12, amplitude, width): maximize p12, break ties toward the gentler
    // pulse (smaller amplitude, then smaller width).
    let (pc, ac, wc) = candidate;
    let (pb, ab, wb) = best;
    if pc > pb + 1e-12 {
        return true;
    }
    if pc < pb - 1e-12 {
        return false;
    }
    if ac < ab - 1e-15 {
        return true;
    }
    if ac > ab + 1e-15 {
        return false;
    }
    wc < wb
}

fn search_grid(
    bands: &BandStructure,
    family: PulseFamily,
    t12: f64,
    amps: &[f64],
    widths: &[f64],
) -> Result<(f64, f64, f64)> {
    let mut cells = Vec::with_capacity(amps.len() * widths.len());
    for &a in amps {
        for &w in widths {
            cells.push((a, w));
        }
    }
    let evaluated: Vec<(f64, f64, f64)> = cells
        .par_iter()
        .map(|&(a, w)| {
            let result = coupling_from_bands(bands, &family.spec(a, w), t12)?;
            Ok((result.p12(), a, w))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = (f64::NEG_INFINITY, f64::INFINITY, f64::INFINITY);
    for &cand in &evaluated {
        if better(cand, best) {
            best = cand;
        }
    }
    Ok(best)
}

fn refined_axis(center: f64, coarse_step: f64, fine_step: f64, lo: f64, hi: f64) -> Vec<f64> {
    let n = (coarse_step / fine_step).round() as i64;
    (-n..=n)
        .map(|j| center + j as f64 * fine_step)
        .filter(|x| *x >= lo - 1e-12 && *x <= hi + 1e-12)
        .collect()
}

/// Exhaustive coarse grid search for the pulse maximizing the q-averaged
/// P12 from band 1, followed by one refinement pass at `refine_factor`
/// higher resolution around the coarse optimum. Ties break toward smaller
/// amplitude.
pub fn optimize_pulse(
    config: &LatticeConfig,
    family: PulseFamily,
    grids: &SearchGrids,
) -> Result<OptimizedPulse> {
    let amps = grids.amplitude.points();
    let widths = if family.has_width() { grids.width.points() } else { vec![0.0] };
    if amps.is_empty() || widths.is_empty() {
        return Err(Error::EmptyGrid(format!(
            "optimization grids for {} are empty",
            family.name()
        )));
    }
    let bands = band_structure(config, config.q_grid_points)?;
    let t12 = 1.0 / (config.recoil_frequency * bands.mean_splitting_er());

    let coarse = search_grid(&bands, family, t12, &amps, &widths)?;

    let fine_amp_step = grids.amplitude.step / grids.refine_factor as f64;
    let fine_amps = refined_axis(
        coarse.1,
        grids.amplitude.step,
        fine_amp_step,
        grids.amplitude.min.min(0.0),
        grids.amplitude.max,
    );
    let (fine_widths, width_resolution) = if family.has_width() {
        let fine_width_step = grids.width.step / grids.refine_factor as f64;
        (
            refined_axis(coarse.2, grids.width.step, fine_width_step, f64::MIN_POSITIVE, grids.width.max + grids.width.step),
            Some(fine_width_step),
        )
    } else {
        (vec![0.0], None)
    };
    let fine = search_grid(&bands, family, t12, &fine_amps, &fine_widths)?;

    let spec = family.spec(fine.1, fine.2);
    let result = coupling_from_bands(&bands, &spec, t12)?;
    Ok(OptimizedPulse { spec, result, amplitude_resolution: fine_amp_step, width_resolution })
}

/// Per-depth optimization summary.
#[derive(Clone, Debug)]
pub struct DepthPoint {
    pub depth_s: f64,
    pub optimum: OptimizedPulse,
    /// Smallest scaled delay achieving the square-pulse optimum; equals the
    /// optimum width for the square family, None otherwise.
    pub tau_min_opt: Option<f64>,
}

/// Optimal coupling versus lattice depth for one pulse family.
///
/// `base` supplies everything except the depth. Depths where band 2 is not
/// at least partly below the barrier are rejected.
pub fn depth_scan(
    base: &LatticeConfig,
    family: PulseFamily,
    s_grid: &[f64],
) -> Result<Vec<DepthPoint>> {
    if s_grid.is_empty() {
        return Err(Error::EmptyGrid("depth grid".into()));
    }
    s_grid
        .iter()
        .map(|&s| {
            let config = LatticeConfig { depth_s: s, ..base.clone() };
            let optimum = optimize_pulse(&config, family, &SearchGrids::defaults(family))?;
            let tau_min_opt = match family {
                PulseFamily::Square => optimum.spec.width_scaled(),
                _ => None,
            };
            Ok(DepthPoint { depth_s: s, optimum, tau_min_opt })
        })
        .collect()
}

/// One point of the loss-versus-coupling curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossPoint {
    pub dx: f64,
    pub p12: f64,
    pub p11: f64,
    pub loss: f64,
}

/// Parametric (P12, loss) curve traced by increasing displacement at fixed
/// temporal parameters.
pub fn loss_vs_coupling(
    config: &LatticeConfig,
    template: &PulseSpec,
    dx_grid: &[f64],
) -> Result<Vec<LossPoint>> {
    let scan = scan_displacement(config, template, dx_grid)?;
    Ok(scan
        .iter()
        .map(|point| LossPoint {
            dx: point.dx,
            p12: point.result.p12(),
            p11: point.result.p11(),
            loss: point.result.loss_from_band(1),
        })
        .collect())
}

/// Linear interpolation of the loss at a target P12 along the rising branch
/// of a loss-versus-coupling curve. Returns None if the curve never reaches
/// the target.
pub fn loss_at_coupling(curve: &[LossPoint], p12_target: f64) -> Option<f64> {
    for pair in curve.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if (a.p12 <= p12_target && p12_target <= b.p12)
            || (b.p12 <= p12_target && p12_target <= a.p12)
        {
            let span = b.p12 - a.p12;
            if span.abs() < 1e-15 {
                return Some(0.5 * (a.loss + b.loss));
            }
            let t = (p12_target - a.p12) / span;
            return Some(a.loss + t * (b.loss - a.loss));
        }
    }
    None
}

pub use crate::lattice::mean_splitting_period as splitting_period;
