//! Spectra from populations: absorption/transmission synthesis, corrected
//! hole spectra, excitation spectra, fluorescence decays, hole-decay
//! series, and the noise/averaging model.

use crate::fitting::{self, EngineOptions, FitError, FitResult};
use crate::levels::{
    discretize_window, EnsembleModel, IonClass, LevelError, TransitionTable, N_LEVELS,
};
use crate::pump::{
    ClassDynamics, ErasePulse, LaserPulse, PopulationState, PulseSequence, PumpError,
    RelaxationParams,
};
use crate::spectro::{lorentzian_peak_normalized, lorentzian_unchecked, AxisKind, Spectrum, SpectroError};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReadoutError {
    #[error("axis point {value} Hz lies outside the discretized ensemble span [{lo}, {hi}] Hz")]
    AxisOutsideSpan { value: f64, lo: f64, hi: f64 },
    #[error("spectra have different axes (length {a} vs {b})")]
    MismatchedAxes { a: usize, b: usize },
    #[error("reference transmission contains a zero sample at index {0}")]
    ZeroReference(usize),
    #[error("linear transmission requires max absorption <= 0.2, got {0}")]
    LinearModeSaturated(f64),
    #[error("absorption must be non-negative, got {0}")]
    NegativeAbsorption(f64),
    #[error("fluorescence lifetime must be positive, got {0}")]
    NonPositiveLifetime(f64),
    #[error("delays must be sorted, >= {min_s} s and distinct (violated at index {index})")]
    BadDelays { index: usize, min_s: f64 },
    #[error(transparent)]
    Pump(#[from] PumpError),
    #[error(transparent)]
    Level(#[from] LevelError),
    #[error(transparent)]
    Spectro(#[from] SpectroError),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Minimum readout delay, s (shortest delay used experimentally).
pub const MIN_READOUT_DELAY_S: f64 = 5e-3;

/// Factor by which the display kernel is widened above the class spacing
/// so discretization ripple stays below the convergence tolerance.
pub const RESOLUTION_FLOOR_FACTOR: f64 = 3.0;

/// Kernel FWHM used to render class sums on an axis: the homogeneous
/// width, floored at [`RESOLUTION_FLOOR_FACTOR`] times the class spacing.
pub fn display_kernel_fwhm(gamma_h_hz: f64, classes: &[IonClass]) -> f64 {
    let spacing = if classes.len() > 1 {
        (classes[classes.len() - 1].detuning_hz - classes[0].detuning_hz) / (classes.len() - 1) as f64
    } else {
        0.0
    };
    gamma_h_hz.max(RESOLUTION_FLOOR_FACTOR * spacing.abs())
}

/// Per-class ground populations, one triple per class.
pub type GroundPopulations = Vec<[f64; N_LEVELS]>;

/// α(ω) = alpha0 · Σ_classes w_c Σ_jk p_gj(c) · s_jk · L(ω − δ_c − off_jk),
/// with L the area-normalized Lorentzian of the display kernel width.
pub fn absorption_spectrum(
    classes: &[IonClass],
    table: &TransitionTable,
    ground: &GroundPopulations,
    axis_hz: &[f64],
    alpha0: f64,
    gamma_h_hz: f64,
) -> Result<Spectrum, ReadoutError> {
    let lo = classes.first().map(|c| c.detuning_hz).unwrap_or(0.0) + table.min_offset_hz();
    let hi = classes.last().map(|c| c.detuning_hz).unwrap_or(0.0) + table.max_offset_hz();
    for &x in axis_hz {
        if x < lo || x > hi {
            return Err(ReadoutError::AxisOutsideSpan { value: x, lo, hi });
        }
    }
    let kernel = display_kernel_fwhm(gamma_h_hz, classes);
    let contributions: Vec<Vec<f64>> = classes
        .par_iter()
        .zip(ground.par_iter())
        .map(|(class, pops)| {
            let mut local = vec![0.0; axis_hz.len()];
            for t in table.transitions() {
                let weight = class.weight * pops[t.ground] * t.strength;
                if weight == 0.0 {
                    continue;
                }
                let center = class.detuning_hz + t.offset_hz;
                for (i, &x) in axis_hz.iter().enumerate() {
                    local[i] += weight * lorentzian_unchecked(x, center, kernel);
                }
            }
            local
        })
        .collect();
    let mut values = vec![0.0; axis_hz.len()];
    for local in contributions {
        for (v, l) in values.iter_mut().zip(local) {
            *v += l;
        }
    }
    for v in values.iter_mut() {
        *v *= alpha0;
    }
    Ok(Spectrum::new(axis_hz.to_vec(), values, AxisKind::Detuning)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransmissionMode {
    /// T = 1 − α; valid only for max α ≤ 0.2.
    Linear,
    /// T = exp(−α).
    BeerLambert,
}

/// Transmission from absorption.
pub fn transmission(absorption: &Spectrum, mode: TransmissionMode) -> Result<Spectrum, ReadoutError> {
    if let Some(&bad) = absorption.values().iter().find(|&&a| a < 0.0) {
        return Err(ReadoutError::NegativeAbsorption(bad));
    }
    match mode {
        TransmissionMode::Linear => {
            let max = absorption.values().iter().cloned().fold(0.0, f64::max);
            if max > 0.2 {
                return Err(ReadoutError::LinearModeSaturated(max));
            }
            Ok(absorption.map_values(|a| 1.0 - a)?)
        }
        TransmissionMode::BeerLambert => Ok(absorption.map_values(|a| (-a).exp())?),
    }
}

/// A corrected hole spectrum: relative transmission change versus
/// detuning, positive at the hole, negative at anti-holes.
#[derive(Debug, Clone, PartialEq)]
pub struct HoleSpectrum {
    spectrum: Spectrum,
    burn_frequency_hz: f64,
}

impl HoleSpectrum {
    pub fn new(spectrum: Spectrum, burn_frequency_hz: f64) -> Self {
        Self { spectrum, burn_frequency_hz }
    }

    pub fn axis(&self) -> &[f64] {
        self.spectrum.axis()
    }

    pub fn values(&self) -> &[f64] {
        self.spectrum.values()
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn burn_frequency_hz(&self) -> f64 {
        self.burn_frequency_hz
    }
}

/// Ratio correction: value = T_burned/T_reference − 1. The ratio cancels
/// any static frequency-dependent response shared by the two scans.
pub fn hole_spectrum(
    burned: &Spectrum,
    reference: &Spectrum,
    burn_frequency_hz: f64,
) -> Result<HoleSpectrum, ReadoutError> {
    if burned.len() != reference.len()
        || burned.axis().iter().zip(reference.axis()).any(|(a, b)| a != b)
    {
        return Err(ReadoutError::MismatchedAxes { a: burned.len(), b: reference.len() });
    }
    if let Some(i) = reference.values().iter().position(|&v| v == 0.0) {
        return Err(ReadoutError::ZeroReference(i));
    }
    let values: Vec<f64> = burned
        .values()
        .iter()
        .zip(reference.values())
        .map(|(&b, &r)| b / r - 1.0)
        .collect();
    Ok(HoleSpectrum::new(
        Spectrum::new(burned.axis().to_vec(), values, AxisKind::Detuning)?,
        burn_frequency_hz,
    ))
}

/// Excitation spectrum from the thermal ensemble: total excitation rate
/// versus laser frequency, scaled by the detection efficiency.
pub fn simulate_ple(
    ensemble: &EnsembleModel,
    tables: &[(TransitionTable, f64)],
    axis_hz: &[f64],
    gamma_h_hz: f64,
    detection_efficiency: f64,
) -> Result<Spectrum, ReadoutError> {
    let kernel = display_kernel_fwhm(gamma_h_hz, &ensemble.classes);
    let thermal = 1.0 / N_LEVELS as f64;
    let values: Vec<f64> = axis_hz
        .par_iter()
        .map(|&x| {
            let mut y = 0.0;
            for (table, abundance) in tables {
                for class in &ensemble.classes {
                    for t in table.transitions() {
                        y += abundance
                            * class.weight
                            * thermal
                            * t.strength
                            * lorentzian_peak_normalized(x, class.detuning_hz + t.offset_hz, kernel);
                    }
                }
            }
            detection_efficiency * y
        })
        .collect();
    Ok(Spectrum::new(axis_hz.to_vec(), values, AxisKind::Detuning)?)
}

/// A·exp(−t/τ) sampled on `times_s`.
pub fn simulate_fluorescence_decay(
    tau_obs_s: f64,
    times_s: &[f64],
    amplitude: f64,
) -> Result<(Vec<f64>, Vec<f64>), ReadoutError> {
    if !(tau_obs_s > 0.0) || !tau_obs_s.is_finite() {
        return Err(ReadoutError::NonPositiveLifetime(tau_obs_s));
    }
    let values = times_s.iter().map(|&t| amplitude * (-t / tau_obs_s).exp()).collect();
    Ok((times_s.to_vec(), values))
}

/// Add zero-mean Gaussian noise per sample per sequence and return the
/// mean of `n_average` sequences. Deterministic for a fixed seed
/// (ChaCha12 keyed by `seed`/`stream`).
pub fn add_noise_and_average(
    spectrum: &Spectrum,
    sigma: f64,
    n_average: usize,
    seed: u64,
    stream: u64,
) -> Result<Spectrum, ReadoutError> {
    if sigma == 0.0 || n_average == 0 {
        return Ok(spectrum.clone());
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let n = spectrum.len();
    let mut acc = vec![0.0; n];
    for _ in 0..n_average {
        for a in acc.iter_mut() {
            let g: f64 = rng.sample(rand_distr::StandardNormal);
            *a += sigma * g;
        }
    }
    let values: Vec<f64> = spectrum
        .values()
        .iter()
        .zip(&acc)
        .map(|(&v, &noise)| v + noise / n_average as f64)
        .collect();
    Ok(spectrum.with_values(values)?)
}

// ---------------------------------------------------------------------------
// the hole-burning engine
// ---------------------------------------------------------------------------

/// Static configuration of a hole-burning simulation: level structure per
/// isotope, relaxation, linewidths, optical depth and windowing.
#[derive(Debug, Clone)]
pub struct ShbSetup {
    /// Transition tables with isotope abundances (weights summing to 1).
    pub tables: Vec<(TransitionTable, f64)>,
    pub profile: crate::levels::InhomogeneousProfile,
    pub relax: RelaxationParams,
    pub gamma_h_hz: f64,
    pub gamma_laser_hz: f64,
    /// Peak thermal absorption the spectra are scaled to.
    pub alpha_peak: f64,
    pub transmission_mode: TransmissionMode,
    /// Ion classes across the simulation window.
    pub window_classes: usize,
    /// Extra window beyond the scan and the transition offsets, Hz.
    pub window_margin_hz: f64,
}

impl ShbSetup {
    pub fn gamma_eff_hz(&self) -> f64 {
        self.gamma_h_hz + self.gamma_laser_hz
    }

    /// Class window covering every ion that the burn, the scan or any
    /// transition offset can reach.
    pub fn window(&self, scan: &LaserPulse, burn_detuning_hz: f64) -> (f64, f64) {
        let scan_lo = (scan.center_detuning_hz - scan.scan_span_hz / 2.0).min(burn_detuning_hz);
        let scan_hi = (scan.center_detuning_hz + scan.scan_span_hz / 2.0).max(burn_detuning_hz);
        let max_off = self.tables.iter().map(|(t, _)| t.max_offset_hz()).fold(f64::NEG_INFINITY, f64::max);
        let min_off = self.tables.iter().map(|(t, _)| t.min_offset_hz()).fold(f64::INFINITY, f64::min);
        (scan_lo - max_off - self.window_margin_hz, scan_hi - min_off + self.window_margin_hz)
    }
}

/// What happens between the initial thermal state and the readout scan.
#[derive(Debug, Clone)]
pub enum HoleProtocol {
    /// burn × n → delay → readout.
    BurnReadout,
    /// burn × n → erase → delay → readout.
    BurnEraseReadout { erase: ErasePulse },
    /// burn × n → erase → burn(reburn) × n → delay → readout.
    BurnEraseReburn { erase: ErasePulse, reburn: LaserPulse },
}

impl HoleProtocol {
    fn erase(&self) -> Option<&ErasePulse> {
        match self {
            HoleProtocol::BurnReadout => None,
            HoleProtocol::BurnEraseReadout { erase } => Some(erase),
            HoleProtocol::BurnEraseReburn { erase, .. } => Some(erase),
        }
    }

    /// The frequency the final hole is expected at.
    fn hole_frequency(&self, sequence: &PulseSequence) -> f64 {
        match self {
            HoleProtocol::BurnEraseReburn { reburn, .. } => reburn.center_detuning_hz,
            _ => sequence.burn.center_detuning_hz,
        }
    }
}

/// Everything a hole run produces.
#[derive(Debug, Clone)]
pub struct ShbOutputs {
    pub hole: HoleSpectrum,
    pub burned_transmission: Spectrum,
    pub reference_transmission: Spectrum,
    /// alpha0 scale that places the thermal peak absorption at
    /// `alpha_peak` (shared by both spectra).
    pub alpha0: f64,
    pub n_classes: usize,
}

/// Run a full hole protocol: a burned pass and a reference pass (identical
/// but without the burns), both rendered as transmission on the scan grid,
/// noise-averaged, and ratio-corrected into a hole spectrum.
///
/// Classes evolve independently and in parallel; the spectra are reduced
/// in class order, so results are bit-identical for any thread count.
pub fn simulate_hole(
    setup: &ShbSetup,
    sequence: &PulseSequence,
    protocol: &HoleProtocol,
    seed: u64,
) -> Result<ShbOutputs, ReadoutError> {
    sequence.validate()?;
    setup.relax.validate()?;
    let (win_lo, win_hi) = setup.window(&sequence.readout, sequence.burn.center_detuning_hz);
    let axis = scan_axis(&sequence.readout, sequence.scan_steps);

    let mut burned_alpha_raw = vec![0.0; axis.len()];
    let mut reference_alpha_raw = vec![0.0; axis.len()];
    let mut thermal_alpha_raw = vec![0.0; axis.len()];
    let mut n_classes_total = 0;

    for (table, abundance) in &setup.tables {
        let classes = discretize_window(&setup.profile, win_lo, win_hi, setup.window_classes)?;
        n_classes_total += classes.len();
        let kernel = display_kernel_fwhm(setup.gamma_h_hz, &classes);
        let dynamics = ClassDynamics {
            table,
            relax: setup.relax,
            gamma_eff_hz: setup.gamma_eff_hz(),
        };

        let per_class: Result<Vec<_>, ReadoutError> = classes
            .par_iter()
            .map(|class| {
                let burned = run_class(&dynamics, class, sequence, protocol, true)?;
                let reference = run_class(&dynamics, class, sequence, protocol, false)?;
                let mut local_burn = vec![0.0; axis.len()];
                let mut local_ref = vec![0.0; axis.len()];
                let mut local_thermal = vec![0.0; axis.len()];
                let thermal = PopulationState::thermal().ground();
                for t in table.transitions() {
                    let center = class.detuning_hz + t.offset_hz;
                    let scale = abundance * class.weight * t.strength;
                    for (i, &x) in axis.iter().enumerate() {
                        let line = scale * lorentzian_unchecked(x, center, kernel);
                        local_burn[i] += line * burned[i][t.ground];
                        local_ref[i] += line * reference[i][t.ground];
                        local_thermal[i] += line * thermal[t.ground];
                    }
                }
                Ok((local_burn, local_ref, local_thermal))
            })
            .collect();

        for (b, r, th) in per_class? {
            for i in 0..axis.len() {
                burned_alpha_raw[i] += b[i];
                reference_alpha_raw[i] += r[i];
                thermal_alpha_raw[i] += th[i];
            }
        }
    }

    // calibrate alpha0 so the thermal ensemble peaks at alpha_peak
    let thermal_peak = thermal_alpha_raw.iter().cloned().fold(0.0, f64::max);
    let alpha0 = if thermal_peak > 0.0 { setup.alpha_peak / thermal_peak } else { 0.0 };

    let to_transmission = |raw: &[f64]| -> Result<Spectrum, ReadoutError> {
        let alpha = Spectrum::new(
            axis.clone(),
            raw.iter().map(|v| v * alpha0).collect(),
            AxisKind::Detuning,
        )?;
        transmission(&alpha, setup.transmission_mode)
    };
    let burned_t = to_transmission(&burned_alpha_raw)?;
    let reference_t = to_transmission(&reference_alpha_raw)?;

    let burned_avg = add_noise_and_average(&burned_t, sequence.noise_sigma, sequence.n_average, seed, 0)?;
    let reference_avg =
        add_noise_and_average(&reference_t, sequence.noise_sigma, sequence.n_average, seed, 1)?;

    let hole = hole_spectrum(&burned_avg, &reference_avg, protocol.hole_frequency(sequence))?;
    Ok(ShbOutputs {
        hole,
        burned_transmission: burned_avg,
        reference_transmission: reference_avg,
        alpha0,
        n_classes: n_classes_total,
    })
}

fn scan_axis(scan: &LaserPulse, steps: usize) -> Vec<f64> {
    crate::spectro::midpoint_axis(scan.center_detuning_hz, scan.scan_span_hz, steps)
}

/// One class through the protocol; returns the ground populations the
/// probe sees at every scan sub-step.
fn run_class(
    dynamics: &ClassDynamics,
    class: &IonClass,
    sequence: &PulseSequence,
    protocol: &HoleProtocol,
    with_burn: bool,
) -> Result<Vec<[f64; N_LEVELS]>, PumpError> {
    let mut p = PopulationState::thermal();
    let det = class.detuning_hz;
    if with_burn {
        dynamics.burn_phase(&mut p, det, &sequence.burn, sequence.n_burn, sequence.inter_burn_wait_s)?;
    }
    if let Some(erase) = protocol.erase() {
        dynamics.erase_phase(&mut p, det, erase)?;
    }
    if let (HoleProtocol::BurnEraseReburn { reburn, .. }, true) = (protocol, with_burn) {
        dynamics.burn_phase(&mut p, det, reburn, sequence.n_burn, sequence.inter_burn_wait_s)?;
    }
    dynamics.free_phase(&mut p, det, sequence.readout_delay_s)?;
    dynamics.scan_phase(&mut p, det, &sequence.readout, sequence.scan_steps)
}

/// Delays (s) versus fitted hole areas (Hz · relative transmission).
#[derive(Debug, Clone, PartialEq)]
pub struct DecaySeries {
    delays_s: Vec<f64>,
    areas: Vec<f64>,
}

impl DecaySeries {
    pub fn new(delays_s: Vec<f64>, areas: Vec<f64>) -> Result<Self, ReadoutError> {
        for i in 0..delays_s.len() {
            let ok = delays_s[i].is_finite()
                && areas.get(i).is_some_and(|a| a.is_finite())
                && (i == 0 || delays_s[i] > delays_s[i - 1]);
            if !ok {
                return Err(ReadoutError::BadDelays { index: i, min_s: 0.0 });
            }
        }
        Ok(Self { delays_s, areas })
    }

    pub fn delays_s(&self) -> &[f64] {
        &self.delays_s
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }
}

/// Area under a fitted Lorentzian hole: amplitude · π · FWHM / 2.
pub fn lorentzian_area(amplitude: f64, fwhm: f64) -> f64 {
    amplitude * std::f64::consts::PI * fwhm / 2.0
}

/// Burn → wait(delay) → readout for every delay; each run is fitted and
/// the hole areas are collected. Delays must be sorted, distinct, and at
/// least [`MIN_READOUT_DELAY_S`].
pub fn hole_decay_series(
    setup: &ShbSetup,
    sequence: &PulseSequence,
    delays_s: &[f64],
    seed: u64,
) -> Result<(DecaySeries, Vec<FitResult>), ReadoutError> {
    for (i, &d) in delays_s.iter().enumerate() {
        if d < MIN_READOUT_DELAY_S || (i > 0 && d <= delays_s[i - 1]) {
            return Err(ReadoutError::BadDelays { index: i, min_s: MIN_READOUT_DELAY_S });
        }
    }
    let mut areas = Vec::with_capacity(delays_s.len());
    let mut fits = Vec::with_capacity(delays_s.len());
    for (i, &delay) in delays_s.iter().enumerate() {
        let mut seq = sequence.clone();
        seq.readout_delay_s = delay;
        let out = simulate_hole(setup, &seq, &HoleProtocol::BurnReadout, seed.wrapping_add(i as u64))?;
        let fit = fitting::fit_lorentzian_peak(
            out.hole.axis(),
            out.hole.values(),
            None,
            &EngineOptions::default(),
        )?;
        let area = lorentzian_area(
            fit.value("amplitude").unwrap_or(0.0),
            fit.value("fwhm").unwrap_or(0.0),
        );
        areas.push(area);
        fits.push(fit);
    }
    Ok((DecaySeries::new(delays_s.to_vec(), areas)?, fits))
}
