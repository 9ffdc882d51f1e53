//! Run configuration: a single self-describing TOML file carries every
//! physical and numerical parameter; command-line flags are reserved for
//! paths, the seed and verbosity.
//!
//! Unknown keys are hard errors, missing required keys are reported with
//! their key path, and all physical values are pushed through the owning
//! module's validation before a run starts.

use crate::levels::{
    build_transition_table, EnsembleModel, HyperfineManifold, InhomogeneousProfile,
    IsotopeComponent, GaussianComponent, LevelError, ManifoldLabel, TransitionTable,
    discretize_ensemble, DEFAULT_GAP_WINDOW, N_LEVELS,
};
use crate::photophysics::{EmissionBands, PhotoError, N_BANDS};
use crate::pump::{ErasePulse, LaserPulse, PulseSequence, PumpError, RelaxationParams};
use crate::readout::{ReadoutError, ShbSetup, TransmissionMode};
use crate::spectro::Linewidths;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config invalid at {key}: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error("config rejected by {key}: {source}")]
    Level {
        key: &'static str,
        #[source]
        source: LevelError,
    },
    #[error("config rejected by {key}: {source}")]
    Pump {
        key: &'static str,
        #[source]
        source: PumpError,
    },
    #[error("config rejected by {key}: {source}")]
    Photo {
        key: &'static str,
        #[source]
        source: PhotoError,
    },
    #[error(transparent)]
    Readout(#[from] ReadoutError),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProfileComponentConfig {
    pub center_ghz: f64,
    pub fwhm_ghz: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct IsotopeConfig {
    pub abundance: f64,
    pub ground_offsets_mhz: [f64; N_LEVELS],
    pub excited_offsets_mhz: [f64; N_LEVELS],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub components: Vec<ProfileComponentConfig>,
    pub span_ghz: f64,
    pub n_classes: usize,
    #[serde(default)]
    pub isotopes: Vec<IsotopeConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct LevelsConfig {
    pub ground_offsets_mhz: [f64; N_LEVELS],
    pub excited_offsets_mhz: [f64; N_LEVELS],
    #[serde(default)]
    pub strengths: Option<[[f64; N_LEVELS]; N_LEVELS]>,
    #[serde(default)]
    pub branching: Option<[[f64; N_LEVELS]; N_LEVELS]>,
    /// Plausibility window for adjacent hyperfine gaps, MHz.
    #[serde(default = "default_gap_window_mhz")]
    pub gap_window_mhz: [f64; 2],
}

fn default_gap_window_mhz() -> [f64; 2] {
    [DEFAULT_GAP_WINDOW.0 / 1e6, DEFAULT_GAP_WINDOW.1 / 1e6]
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    pub tau_exc_s: f64,
    pub t1_spin_s: f64,
    pub gamma_h_mhz: f64,
    #[serde(default)]
    pub gamma_laser_mhz: f64,
    pub s_burn: f64,
    /// Probe saturation; defaults to s_burn/6 (burn:probe power 30:5 mW).
    #[serde(default)]
    pub s_probe: Option<f64>,
    #[serde(default = "default_s_erase")]
    pub s_erase: f64,
    /// Compute transmission from frozen populations instead of letting the
    /// probe pump during the scan.
    #[serde(default)]
    pub non_invasive_readout: bool,
}

fn default_s_erase() -> f64 {
    20_000.0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SequenceConfig {
    pub n_burn: usize,
    pub burn_ms: f64,
    pub wait_ms: f64,
    pub delay_ms: Vec<f64>,
    pub scan_span_mhz: f64,
    #[serde(default = "default_scan_ms")]
    pub scan_ms: f64,
    #[serde(default = "default_scan_steps")]
    pub scan_steps: usize,
    #[serde(default)]
    pub burn_detuning_mhz: f64,
    pub n_average: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default = "default_window_classes")]
    pub window_classes: usize,
    #[serde(default = "default_window_margin_mhz")]
    pub window_margin_mhz: f64,
    /// Erase sweep span; defaults to the readout span.
    #[serde(default)]
    pub erase_span_mhz: Option<f64>,
    #[serde(default = "default_erase_ms")]
    pub erase_ms: f64,
    #[serde(default = "default_erase_passes")]
    pub erase_passes: usize,
    /// Settling after the erase sweep; defaults to 10 τ_exc.
    #[serde(default)]
    pub erase_settle_ms: Option<f64>,
    #[serde(default = "default_reburn_detuning_mhz")]
    pub reburn_detuning_mhz: f64,
    /// What the hole run does between burn and readout.
    #[serde(default)]
    pub protocol: ProtocolKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolKind {
    #[default]
    Burn,
    BurnErase,
    BurnEraseReburn,
}

fn default_scan_ms() -> f64 {
    2.0
}

fn default_scan_steps() -> usize {
    1024
}

fn default_window_classes() -> usize {
    1600
}

fn default_window_margin_mhz() -> f64 {
    120.0
}

fn default_erase_ms() -> f64 {
    2.0
}

fn default_erase_passes() -> usize {
    1
}

fn default_reburn_detuning_mhz() -> f64 {
    5.0
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PhotophysicsConfig {
    pub a_md_per_s: f64,
    pub refractive_index: f64,
    pub i_tot_over_i_md: f64,
    /// Lifetime entering the quantum-yield pipeline.
    pub tau_obs_s: f64,
    /// Lifetime driving the simulated fluorescence decay.
    pub tau_fluorescence_s: f64,
    pub q_tot: f64,
    pub bands: [f64; N_BANDS],
    pub band_fwhm_nm: f64,
    /// Optional measured emission spectrum (wavelength CSV) for the
    /// chromaticity computation; the synthetic band spectrum is used when
    /// absent.
    pub emission_csv: Option<String>,
}

impl Default for PhotophysicsConfig {
    fn default() -> Self {
        Self {
            a_md_per_s: 14.65,
            refractive_index: 1.5,
            i_tot_over_i_md: 22.65,
            tau_obs_s: 822e-6,
            tau_fluorescence_s: 880e-6,
            q_tot: 0.38,
            bands: [0.5, 7.116279069767442, 54.08372093023256, 1.5, 26.0, 3.3, 7.5],
            band_fwhm_nm: 8.0,
            emission_csv: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    pub hole_csv: String,
    pub burned_csv: String,
    pub reference_csv: String,
    pub ple_csv: String,
    pub decay_csv: String,
    pub fluorescence_csv: String,
    pub ple_span_ghz: f64,
    pub ple_points: usize,
    pub fluorescence_span_ms: f64,
    pub fluorescence_points: usize,
    pub transmission: TransmissionMode,
    pub alpha_peak: f64,
    pub detection_efficiency: f64,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            hole_csv: "hole.csv".into(),
            burned_csv: "transmission_burned.csv".into(),
            reference_csv: "transmission_reference.csv".into(),
            ple_csv: "ple.csv".into(),
            decay_csv: "hole_decay.csv".into(),
            fluorescence_csv: "fluorescence.csv".into(),
            ple_span_ghz: 150.0,
            ple_points: 1024,
            fluorescence_span_ms: 5.0,
            fluorescence_points: 512,
            transmission: TransmissionMode::Linear,
            alpha_peak: 0.1,
            detection_efficiency: 1.0,
        }
    }
}

/// The parsed and validated run configuration.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub ensemble: EnsembleConfig,
    pub levels: LevelsConfig,
    pub dynamics: DynamicsConfig,
    pub sequence: SequenceConfig,
    #[serde(default)]
    pub photophysics: PhotophysicsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Parse and validate a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse_config_str(&text)
}

/// Parse and validate config text.
pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let config: RunConfig = toml::from_str(text)?;
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    /// Run every block through the owning module's validation.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.profile()?;
        self.isotope_tables()?;
        self.relaxation()
            .validate()
            .map_err(|source| ConfigError::Pump { key: "dynamics", source })?;
        if !(self.dynamics.gamma_h_mhz > 0.0) {
            return Err(ConfigError::Invalid {
                key: "dynamics.gamma_h_mhz",
                reason: "homogeneous linewidth must be positive".into(),
            });
        }
        if self.dynamics.gamma_laser_mhz < 0.0 {
            return Err(ConfigError::Invalid {
                key: "dynamics.gamma_laser_mhz",
                reason: "laser linewidth must be non-negative".into(),
            });
        }
        if !(self.dynamics.s_burn >= 0.0) {
            return Err(ConfigError::Invalid {
                key: "dynamics.s_burn",
                reason: "saturation must be >= 0".into(),
            });
        }
        if self.sequence.delay_ms.is_empty() {
            return Err(ConfigError::Invalid {
                key: "sequence.delay_ms",
                reason: "need at least one readout delay".into(),
            });
        }
        self.pulse_sequence(self.first_delay_s())
            .validate()
            .map_err(|source| ConfigError::Pump { key: "sequence", source })?;
        self.erase_pulse()
            .validate()
            .map_err(|source| ConfigError::Pump { key: "sequence (erase)", source })?;
        EmissionBands::new(self.photophysics.bands)
            .map_err(|source| ConfigError::Photo { key: "photophysics.bands", source })?;
        if !(self.output.alpha_peak > 0.0) || self.output.alpha_peak > 0.2 {
            return Err(ConfigError::Invalid {
                key: "output.alpha_peak",
                reason: "peak absorption must be in (0, 0.2]".into(),
            });
        }
        if self.output.ple_points < 8 || self.output.fluorescence_points < 8 {
            return Err(ConfigError::Invalid {
                key: "output.ple_points",
                reason: "axes need at least 8 points".into(),
            });
        }
        Ok(())
    }

    pub fn profile(&self) -> Result<InhomogeneousProfile, ConfigError> {
        let components = self
            .ensemble
            .components
            .iter()
            .map(|c| GaussianComponent {
                center_hz: c.center_ghz * 1e9,
                fwhm_hz: c.fwhm_ghz * 1e9,
                weight: c.weight,
            })
            .collect();
        InhomogeneousProfile::new(components)
            .map_err(|source| ConfigError::Level { key: "ensemble.components", source })
    }

    fn manifold(
        &self,
        label: ManifoldLabel,
        offsets_mhz: &[f64; N_LEVELS],
        key: &'static str,
    ) -> Result<HyperfineManifold, ConfigError> {
        let offsets = offsets_mhz.map(|v| v * 1e6);
        HyperfineManifold::with_gap_window(
            label,
            offsets,
            self.levels.gap_window_mhz[0] * 1e6,
            self.levels.gap_window_mhz[1] * 1e6,
        )
        .map_err(|source| ConfigError::Level { key, source })
    }

    /// One transition table per isotope with its abundance. Without an
    /// isotopes list, the `[levels]` block defines a single species.
    pub fn isotope_tables(&self) -> Result<Vec<(TransitionTable, f64)>, ConfigError> {
        let mut out = Vec::new();
        if self.ensemble.isotopes.is_empty() {
            let g = self.manifold(
                ManifoldLabel::Ground,
                &self.levels.ground_offsets_mhz,
                "levels.ground_offsets_mhz",
            )?;
            let e = self.manifold(
                ManifoldLabel::Excited,
                &self.levels.excited_offsets_mhz,
                "levels.excited_offsets_mhz",
            )?;
            let table = build_transition_table(g, e, self.levels.strengths, self.levels.branching)
                .map_err(|source| ConfigError::Level { key: "levels", source })?;
            out.push((table, 1.0));
        } else {
            let total: f64 = self.ensemble.isotopes.iter().map(|i| i.abundance).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(ConfigError::Invalid {
                    key: "ensemble.isotopes",
                    reason: format!("abundances sum to {total}, expected 1"),
                });
            }
            for iso in &self.ensemble.isotopes {
                let g = self.manifold(
                    ManifoldLabel::Ground,
                    &iso.ground_offsets_mhz,
                    "ensemble.isotopes.ground_offsets_mhz",
                )?;
                let e = self.manifold(
                    ManifoldLabel::Excited,
                    &iso.excited_offsets_mhz,
                    "ensemble.isotopes.excited_offsets_mhz",
                )?;
                let table =
                    build_transition_table(g, e, self.levels.strengths, self.levels.branching)
                        .map_err(|source| ConfigError::Level { key: "ensemble.isotopes", source })?;
                out.push((table, iso.abundance));
            }
        }
        Ok(out)
    }

    /// Discretized full-line ensemble for excitation/absorption spectra.
    pub fn ensemble_model(&self) -> Result<EnsembleModel, ConfigError> {
        let profile = self.profile()?;
        let classes = discretize_ensemble(&profile, self.ensemble.span_ghz * 1e9, self.ensemble.n_classes)
            .map_err(|source| ConfigError::Level { key: "ensemble", source })?;
        let isotopes = self
            .isotope_tables()?
            .into_iter()
            .map(|(t, abundance)| IsotopeComponent {
                ground: *t.ground(),
                excited: *t.excited(),
                abundance,
            })
            .collect();
        EnsembleModel::new(profile, classes, isotopes)
            .map_err(|source| ConfigError::Level { key: "ensemble", source })
    }

    pub fn relaxation(&self) -> RelaxationParams {
        RelaxationParams {
            tau_exc_s: self.dynamics.tau_exc_s,
            t1_spin_s: self.dynamics.t1_spin_s,
        }
    }

    pub fn linewidths(&self) -> Linewidths {
        let main_fwhm = self
            .ensemble
            .components
            .iter()
            .max_by(|a, b| a.weight.partial_cmp(&b.weight).unwrap())
            .map(|c| c.fwhm_ghz * 1e9)
            .unwrap_or(0.0);
        Linewidths {
            gamma_h: self.dynamics.gamma_h_mhz * 1e6,
            gamma_inh: main_fwhm,
            gamma_laser: self.dynamics.gamma_laser_mhz * 1e6,
            gamma_hole: 2.0 * (self.dynamics.gamma_h_mhz + self.dynamics.gamma_laser_mhz) * 1e6,
        }
    }

    pub fn s_probe(&self) -> f64 {
        if self.dynamics.non_invasive_readout {
            0.0
        } else {
            self.dynamics.s_probe.unwrap_or(self.dynamics.s_burn / 6.0)
        }
    }

    pub fn first_delay_s(&self) -> f64 {
        self.sequence.delay_ms.first().copied().unwrap_or(5.0) * 1e-3
    }

    pub fn delays_s(&self) -> Vec<f64> {
        self.sequence.delay_ms.iter().map(|d| d * 1e-3).collect()
    }

    /// The burn/wait/delay/readout protocol with the given readout delay.
    pub fn pulse_sequence(&self, delay_s: f64) -> PulseSequence {
        let s = &self.sequence;
        PulseSequence {
            burn: LaserPulse::burn(s.burn_ms * 1e-3, self.dynamics.s_burn, s.burn_detuning_mhz * 1e6),
            n_burn: s.n_burn,
            inter_burn_wait_s: s.wait_ms * 1e-3,
            readout_delay_s: delay_s,
            readout: LaserPulse::readout_scan(
                s.scan_ms * 1e-3,
                self.s_probe(),
                s.burn_detuning_mhz * 1e6,
                s.scan_span_mhz * 1e6,
            ),
            scan_steps: s.scan_steps,
            n_average: s.n_average,
            noise_sigma: s.noise_sigma,
        }
    }

    pub fn erase_pulse(&self) -> ErasePulse {
        let s = &self.sequence;
        ErasePulse {
            span_hz: s.erase_span_mhz.unwrap_or(s.scan_span_mhz) * 1e6,
            center_detuning_hz: s.burn_detuning_mhz * 1e6,
            saturation: self.dynamics.s_erase,
            sweep_duration_s: s.erase_ms * 1e-3,
            n_passes: s.erase_passes,
            steps_per_pass: s.scan_steps.max(crate::pump::MIN_SCAN_STEPS),
            settle_s: s
                .erase_settle_ms
                .map(|ms| ms * 1e-3)
                .unwrap_or(10.0 * self.dynamics.tau_exc_s),
        }
    }

    pub fn shb_setup(&self) -> Result<ShbSetup, ConfigError> {
        Ok(ShbSetup {
            tables: self.isotope_tables()?,
            profile: self.profile()?,
            relax: self.relaxation(),
            gamma_h_hz: self.dynamics.gamma_h_mhz * 1e6,
            gamma_laser_hz: self.dynamics.gamma_laser_mhz * 1e6,
            alpha_peak: self.output.alpha_peak,
            transmission_mode: self.output.transmission,
            window_classes: self.sequence.window_classes,
            window_margin_hz: self.sequence.window_margin_mhz * 1e6,
        })
    }

    pub fn output_path(&self, out_dir: Option<&Path>, file: &str) -> PathBuf {
        let base = out_dir.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&self.output.dir));
        base.join(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[ensemble]
components = [{ center_ghz = 0.0, fwhm_ghz = 50.0, weight = 1.0 }]
span_ghz = 300.0
n_classes = 400

[levels]
ground_offsets_mhz = [0.0, 45.0, 100.0]
excited_offsets_mhz = [0.0, 150.0, 320.0]

[dynamics]
tau_exc_s = 880e-6
t1_spin_s = 2.1
gamma_h_mhz = 22.0
gamma_laser_mhz = 0.25
s_burn = 0.005

[sequence]
n_burn = 10
burn_ms = 2.0
wait_ms = 3.0
delay_ms = [5.0]
scan_span_mhz = 200.0
n_average = 50
seed = 7
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        assert_eq!(cfg.sequence.scan_steps, 1024);
        assert_eq!(cfg.photophysics.a_md_per_s, 14.65);
        assert_eq!(cfg.output.transmission, TransmissionMode::Linear);
        assert!((cfg.s_probe() - 0.005 / 6.0).abs() < 1e-15);
        let seq = cfg.pulse_sequence(cfg.first_delay_s());
        assert_eq!(seq.n_burn, 10);
        assert_eq!(seq.burn.duration_s, 2e-3);
        let erase = cfg.erase_pulse();
        assert_eq!(erase.span_hz, 200e6);
        assert!((erase.settle_s - 8.8e-3).abs() < 1e-12);
    }

    #[test]
    fn empty_config_reports_first_missing_block() {
        let err = parse_config_str("").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("ensemble"), "unexpected message: {msg}");
    }

    #[test]
    fn misspelled_key_is_named() {
        let bad = MINIMAL.replace("gamma_h_mhz", "gamma_h_mzh");
        let err = parse_config_str(&bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("gamma_h_mzh"), "unexpected message: {msg}");
    }

    #[test]
    fn missing_required_key_is_named() {
        let bad = MINIMAL.replace("t1_spin_s = 2.1\n", "");
        let err = parse_config_str(&bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("t1_spin_s"), "unexpected message: {msg}");
    }

    #[test]
    fn invariant_violations_carry_key_paths() {
        let bad = MINIMAL.replace("gamma_h_mhz = 22.0", "gamma_h_mhz = -1.0");
        let err = parse_config_str(&bad).unwrap_err();
        assert!(err.to_string().contains("gamma_h"), "{err}");

        let bad = MINIMAL.replace("excited_offsets_mhz = [0.0, 150.0, 320.0]",
                                  "excited_offsets_mhz = [0.0, 0.2, 320.0]");
        let err = parse_config_str(&bad).unwrap_err();
        assert!(err.to_string().contains("excited_offsets"), "{err}");
    }

    #[test]
    fn isotope_mixture_produces_two_tables() {
        let cfg_text = format!(
            "{MINIMAL}\n[[ensemble.isotopes]]\nabundance = 0.478\nground_offsets_mhz = [0.0, 45.0, 100.0]\nexcited_offsets_mhz = [0.0, 150.0, 320.0]\n\n[[ensemble.isotopes]]\nabundance = 0.522\nground_offsets_mhz = [0.0, 60.0, 130.0]\nexcited_offsets_mhz = [0.0, 160.0, 340.0]\n"
        );
        let cfg = parse_config_str(&cfg_text).unwrap();
        let tables = cfg.isotope_tables().unwrap();
        assert_eq!(tables.len(), 2);
        assert!((tables[0].1 + tables[1].1 - 1.0).abs() < 1e-12);
        let model = cfg.ensemble_model().unwrap();
        assert_eq!(model.isotopes.len(), 2);
    }

    #[test]
    fn regime_from_config_passes() {
        let cfg = parse_config_str(MINIMAL).unwrap();
        let report = crate::pump::validate_shb_regime(&cfg.linewidths(), &cfg.relaxation());
        assert!(report.all_pass());
    }
}
