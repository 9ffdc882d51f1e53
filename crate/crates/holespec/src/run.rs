//! Subcommand implementations: each takes the parsed config, writes its
//! output files and returns an ordered key=value summary for stdout.
//!
//! Exit-code contract: 0 success, 1 validation/configuration/IO error,
//! 2 fit non-convergence (including degenerate fit input).

use crate::config::{ConfigError, ProtocolKind, RunConfig};
use crate::csvio::{self, CsvError};
use crate::fitting::{self, EngineOptions, FitError, FitResult};
use crate::photophysics::{self, EmissionBands, PhotoError};
use crate::pump::{self, LaserPulse};
use crate::readout::{self, HoleProtocol, ReadoutError};
use crate::spectro::{self, midpoint_axis, SpectroError};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub type Summary = Vec<(String, String)>;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error(transparent)]
    Spectro(#[from] SpectroError),
    #[error(transparent)]
    Photo(#[from] PhotoError),
    #[error("simulation failed: {0}")]
    Readout(ReadoutError),
    #[error("fit failed: {0}")]
    Fit(#[from] FitError),
    #[error("fit did not converge: {0}")]
    NonConvergence(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<ReadoutError> for RunError {
    fn from(e: ReadoutError) -> Self {
        match e {
            ReadoutError::Fit(f) => RunError::Fit(f),
            other => RunError::Readout(other),
        }
    }
}

impl RunError {
    /// 1 for validation/config/IO problems, 2 for fit failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Fit(_) | RunError::NonConvergence(_) => 2,
            _ => 1,
        }
    }
}

fn push_f(summary: &mut Summary, key: &str, value: f64) {
    summary.push((key.to_string(), format!("{value:.9e}")));
}

fn push_i(summary: &mut Summary, key: &str, value: usize) {
    summary.push((key.to_string(), value.to_string()));
}

fn push_s(summary: &mut Summary, key: &str, value: impl Into<String>) {
    summary.push((key.to_string(), value.into()));
}

fn ensure_out_dir(path: &Path) -> Result<(), RunError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|source| RunError::Io { path: parent.display().to_string(), source })?;
    }
    Ok(())
}

fn fit_summary(summary: &mut Summary, fit: &FitResult, axis_unit: &str) {
    for p in &fit.parameters {
        let suffix = match axis_unit {
            "" => String::new(),
            u => format!("_{u}"),
        };
        let is_axis_quantity = p.name.starts_with("center")
            || p.name.starts_with("fwhm")
            || p.name == "tau";
        let key = if is_axis_quantity { format!("{}{suffix}", p.name) } else { p.name.clone() };
        push_f(summary, &key, p.value);
        push_f(summary, &format!("{key}_err"), p.std_err);
    }
    push_f(summary, "residual_rms", fit.residual_rms);
    push_i(summary, "iterations", fit.iterations);
    push_s(summary, "converged", if fit.converged { "true" } else { "false" });
    push_s(summary, "rank_deficient", if fit.rank_deficient { "true" } else { "false" });
}

fn protocol_from_config(cfg: &RunConfig) -> HoleProtocol {
    match cfg.sequence.protocol {
        ProtocolKind::Burn => HoleProtocol::BurnReadout,
        ProtocolKind::BurnErase => HoleProtocol::BurnEraseReadout { erase: cfg.erase_pulse() },
        ProtocolKind::BurnEraseReburn => HoleProtocol::BurnEraseReburn {
            erase: cfg.erase_pulse(),
            reburn: LaserPulse::burn(
                cfg.sequence.burn_ms * 1e-3,
                cfg.dynamics.s_burn,
                cfg.sequence.reburn_detuning_mhz * 1e6,
            ),
        },
    }
}

/// simulate-shb: burn (and optionally erase/re-burn) then read the hole.
pub fn simulate_shb(cfg: &RunConfig, out_dir: Option<&Path>, seed: Option<u64>) -> Result<Summary, RunError> {
    let setup = cfg.shb_setup()?;
    let mut sequence = cfg.pulse_sequence(cfg.first_delay_s());
    let protocol = protocol_from_config(cfg);
    if let HoleProtocol::BurnEraseReburn { reburn, .. } = &protocol {
        // scan follows the re-burned hole
        sequence.readout.center_detuning_hz = reburn.center_detuning_hz;
    }
    let seed = seed.unwrap_or(cfg.sequence.seed);
    let out = readout::simulate_hole(&setup, &sequence, &protocol, seed)?;

    let hole_path = cfg.output_path(out_dir, &cfg.output.hole_csv);
    let burned_path = cfg.output_path(out_dir, &cfg.output.burned_csv);
    let reference_path = cfg.output_path(out_dir, &cfg.output.reference_csv);
    ensure_out_dir(&hole_path)?;
    csvio::write_spectrum(&hole_path, out.hole.spectrum(), "delta_transmission")?;
    csvio::write_spectrum(&burned_path, &out.burned_transmission, "transmission")?;
    csvio::write_spectrum(&reference_path, &out.reference_transmission, "transmission")?;

    let mut summary = Summary::new();
    push_s(&mut summary, "protocol", match cfg.sequence.protocol {
        ProtocolKind::Burn => "burn",
        ProtocolKind::BurnErase => "burn-erase",
        ProtocolKind::BurnEraseReburn => "burn-erase-reburn",
    });
    push_i(&mut summary, "n_classes", out.n_classes);
    push_i(&mut summary, "scan_steps", sequence.scan_steps);
    push_f(&mut summary, "burn_detuning_hz", sequence.burn.center_detuning_hz);
    push_f(&mut summary, "hole_frequency_hz", out.hole.burn_frequency_hz());
    push_f(&mut summary, "alpha0", out.alpha0);
    let peak = out.hole.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    push_f(&mut summary, "hole_peak", peak);
    push_s(&mut summary, "out_hole", hole_path.display().to_string());
    push_s(&mut summary, "out_burned", burned_path.display().to_string());
    push_s(&mut summary, "out_reference", reference_path.display().to_string());
    Ok(summary)
}

/// fit-hole: Lorentzian + baseline on the hole CSV, plus the derived
/// homogeneous linewidth and coherence lifetime.
pub fn fit_hole(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<Summary, RunError> {
    let path = cfg.output_path(out_dir, &cfg.output.hole_csv);
    let spectrum = csvio::read_spectrum(&path)?;
    let fit = fitting::fit_lorentzian_peak(
        spectrum.axis(),
        spectrum.values(),
        None,
        &EngineOptions::default(),
    )?;
    let mut summary = Summary::new();
    push_s(&mut summary, "input", path.display().to_string());
    fit_summary(&mut summary, &fit, "hz");
    let fwhm = fit.value("fwhm").unwrap_or(0.0);
    let amplitude = fit.value("amplitude").unwrap_or(0.0);
    push_f(&mut summary, "hole_area", readout::lorentzian_area(amplitude, fwhm));
    let gamma_laser = cfg.dynamics.gamma_laser_mhz * 1e6;
    if let Ok(gamma_h) = spectro::homogeneous_from_hole(fwhm, gamma_laser) {
        push_f(&mut summary, "gamma_h_hz", gamma_h);
        if let Ok(t2) = spectro::t2_from_linewidth(gamma_h) {
            push_f(&mut summary, "t2_s", t2);
        }
    }
    if !fit.converged {
        return Err(RunError::NonConvergence(format!("hole fit after {} iterations", fit.iterations)));
    }
    Ok(summary)
}

/// hole-decay: one full burn/readout per configured delay, hole areas
/// fitted to A·exp(−delay/t1) + b.
pub fn hole_decay(cfg: &RunConfig, out_dir: Option<&Path>, seed: Option<u64>) -> Result<Summary, RunError> {
    let setup = cfg.shb_setup()?;
    let sequence = cfg.pulse_sequence(cfg.first_delay_s());
    let delays = cfg.delays_s();
    let seed = seed.unwrap_or(cfg.sequence.seed);
    let (series, _fits) = readout::hole_decay_series(&setup, &sequence, &delays, seed)?;

    let path = cfg.output_path(out_dir, &cfg.output.decay_csv);
    ensure_out_dir(&path)?;
    csvio::write_series(&path, series.delays_s(), series.areas(), "delay_s,hole_area")?;

    let fit = fitting::fit_exponential(series.delays_s(), series.areas(), None, &EngineOptions::default())?;
    let mut summary = Summary::new();
    push_i(&mut summary, "n_delays", delays.len());
    push_s(&mut summary, "out_decay", path.display().to_string());
    fit_summary(&mut summary, &fit, "s");
    if let Some(tau) = fit.value("tau") {
        push_f(&mut summary, "t1_spin_s", tau);
        push_f(&mut summary, "t1_spin_err_s", fit.std_err("tau").unwrap_or(f64::NAN));
    }
    if !fit.converged {
        return Err(RunError::NonConvergence("hole-decay exponential fit".into()));
    }
    Ok(summary)
}

/// simulate-ple: excitation spectrum of the thermal ensemble.
pub fn simulate_ple(cfg: &RunConfig, out_dir: Option<&Path>, seed: Option<u64>) -> Result<Summary, RunError> {
    let ensemble = cfg.ensemble_model()?;
    let tables = cfg.isotope_tables()?;
    let axis = midpoint_axis(0.0, cfg.output.ple_span_ghz * 1e9, cfg.output.ple_points);
    let ple = readout::simulate_ple(
        &ensemble,
        &tables,
        &axis,
        cfg.dynamics.gamma_h_mhz * 1e6,
        cfg.output.detection_efficiency,
    )?;
    let seed = seed.unwrap_or(cfg.sequence.seed);
    let noisy = readout::add_noise_and_average(
        &ple,
        cfg.sequence.noise_sigma * ple.values().iter().cloned().fold(0.0, f64::max),
        cfg.sequence.n_average,
        seed,
        2,
    )?;
    let path = cfg.output_path(out_dir, &cfg.output.ple_csv);
    ensure_out_dir(&path)?;
    csvio::write_spectrum(&path, &noisy, "ple_intensity")?;
    let mut summary = Summary::new();
    push_i(&mut summary, "n_classes", ensemble.classes.len());
    push_i(&mut summary, "axis_points", noisy.len());
    push_s(&mut summary, "out_ple", path.display().to_string());
    Ok(summary)
}

/// fit-ple: Gaussian mixture with one peak per configured profile component.
pub fn fit_ple(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<Summary, RunError> {
    let path = cfg.output_path(out_dir, &cfg.output.ple_csv);
    let spectrum = csvio::read_spectrum(&path)?;
    let n_peaks = cfg.ensemble.components.len().clamp(1, 5);
    let fit = fitting::fit_gaussian_mixture(
        spectrum.axis(),
        spectrum.values(),
        n_peaks,
        None,
        &EngineOptions::default(),
    )?;
    let mut summary = Summary::new();
    push_s(&mut summary, "input", path.display().to_string());
    push_i(&mut summary, "n_peaks", n_peaks);
    fit_summary(&mut summary, &fit, "hz");
    // the strongest peak is the inhomogeneous linewidth estimate
    let main = (0..n_peaks)
        .max_by(|&a, &b| {
            let va = fit.value(&format!("amplitude_{a}")).unwrap_or(0.0);
            let vb = fit.value(&format!("amplitude_{b}")).unwrap_or(0.0);
            va.partial_cmp(&vb).unwrap()
        })
        .unwrap_or(0);
    if let Some(w) = fit.value(&format!("fwhm_{main}")) {
        push_f(&mut summary, "gamma_inh_hz", w);
    }
    if !fit.converged {
        return Err(RunError::NonConvergence("excitation-spectrum fit".into()));
    }
    Ok(summary)
}

/// fit-decay: single exponential plus offset on the decay-series CSV.
pub fn fit_decay(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<Summary, RunError> {
    let path = cfg.output_path(out_dir, &cfg.output.decay_csv);
    let (ts, vs) = csvio::read_series(&path)?;
    let fit = fitting::fit_exponential(&ts, &vs, None, &EngineOptions::default())?;
    let mut summary = Summary::new();
    push_s(&mut summary, "input", path.display().to_string());
    fit_summary(&mut summary, &fit, "s");
    if !fit.converged {
        return Err(RunError::NonConvergence("exponential fit".into()));
    }
    Ok(summary)
}

/// photophysics: the closed-form pipeline plus a synthetic fluorescence
/// decay trace.
pub fn photophysics_run(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<Summary, RunError> {
    let p = &cfg.photophysics;
    let tau_rad = photophysics::radiative_lifetime(p.a_md_per_s, p.refractive_index, p.i_tot_over_i_md)?;
    let q_eu = photophysics::intrinsic_quantum_yield(p.tau_obs_s, tau_rad)?;
    let eta = photophysics::sensitization_efficiency(p.q_tot, q_eu)?;
    let bands = EmissionBands::new(p.bands)?;
    let r21 = photophysics::asymmetry_ratio(&bands)?;
    let fractions = photophysics::emission_fractions(&bands)?;

    let times: Vec<f64> = (0..cfg.output.fluorescence_points)
        .map(|i| cfg.output.fluorescence_span_ms * 1e-3 * i as f64 / (cfg.output.fluorescence_points - 1) as f64)
        .collect();
    let (ts, vs) = readout::simulate_fluorescence_decay(p.tau_fluorescence_s, &times, 1.0)?;
    let path = cfg.output_path(out_dir, &cfg.output.fluorescence_csv);
    ensure_out_dir(&path)?;
    csvio::write_series(&path, &ts, &vs, "t_s,intensity")?;

    let mut summary = Summary::new();
    push_f(&mut summary, "tau_rad_s", tau_rad);
    push_f(&mut summary, "q_eu", q_eu);
    push_f(&mut summary, "eta_sens", eta);
    push_f(&mut summary, "q_tot", p.q_tot);
    push_f(&mut summary, "tau_obs_s", p.tau_obs_s);
    push_f(&mut summary, "tau_fluorescence_s", p.tau_fluorescence_s);
    push_f(&mut summary, "r21", r21);
    for (j, f) in fractions.iter().enumerate() {
        push_f(&mut summary, &format!("fraction_j{j}"), *f);
    }
    push_f(&mut summary, "i_tot_over_i_md_bands", bands.total_over_md()?);
    push_s(&mut summary, "out_fluorescence", path.display().to_string());
    Ok(summary)
}

/// cie: chromaticity of the measured spectrum when configured, otherwise
/// of the synthetic band spectrum.
pub fn cie(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<Summary, RunError> {
    let mut summary = Summary::new();
    let (x, y) = match &cfg.photophysics.emission_csv {
        Some(file) => {
            let path = cfg.output_path(out_dir, file);
            let spectrum = csvio::read_spectrum(&path)?;
            push_s(&mut summary, "source", path.display().to_string());
            photophysics::cie_xy(&spectrum)?
        }
        None => {
            let bands = EmissionBands::new(cfg.photophysics.bands)?;
            let spectrum =
                photophysics::synthetic_band_spectrum(&bands, cfg.photophysics.band_fwhm_nm, 0.5)?;
            push_s(&mut summary, "source", "synthetic-bands");
            photophysics::cie_xy(&spectrum)?
        }
    };
    push_f(&mut summary, "x", x);
    push_f(&mut summary, "y", y);
    Ok(summary)
}

/// validate: the three hole-burning conditions with their ratios. The
/// summary is produced either way; a failing regime maps to exit 1.
pub fn validate(cfg: &RunConfig) -> Result<(Summary, bool), RunError> {
    let report = pump::validate_shb_regime(&cfg.linewidths(), &cfg.relaxation());
    let mut summary = Summary::new();
    for c in &report.conditions {
        push_f(&mut summary, &format!("{}_ratio", c.name), c.ratio);
        push_s(&mut summary, &c.name, if c.pass { "pass" } else { "fail" });
    }
    push_s(&mut summary, "flip_flop_note", report.flip_flop_note.clone());
    push_s(&mut summary, "all_pass", if report.all_pass() { "true" } else { "false" });
    Ok((summary, report.all_pass()))
}

/// The stable key sequence each subcommand prints, for the golden test.
pub fn summary_keys(summary: &Summary) -> Vec<&str> {
    summary.iter().map(|(k, _)| k.as_str()).collect()
}

/// Resolve `--out`: flag wins over the config's output.dir.
pub fn resolve_out_dir(flag: Option<&Path>) -> Option<PathBuf> {
    flag.map(Path::to_path_buf)
}
