//! Spectral units, conversions, lineshapes and the linewidth/coherence
//! algebra the rest of the crate is built on.
//!
//! Everything internal is Hz and seconds. Wavelengths (vacuum nm) and
//! wavenumbers (cm⁻¹) appear only in the conversion functions below.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in vacuum, m/s (exact).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, PartialEq)]
pub enum SpectroError {
    #[error("expected a positive finite value for {name}, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("expected a finite value for {name}, got {value}")]
    NonFinite { name: &'static str, value: f64 },
    #[error("hole width {gamma_hole} Hz must exceed twice the laser width {gamma_laser} Hz")]
    HoleNarrowerThanLaser { gamma_hole: f64, gamma_laser: f64 },
    #[error("spectrum axis must be strictly monotonic (violated at index {index})")]
    NonMonotonicAxis { index: usize },
    #[error("spectrum axis and values differ in length ({axis} vs {values})")]
    LengthMismatch { axis: usize, values: usize },
    #[error("spectrum contains a non-finite value at index {index}")]
    NonFiniteSample { index: usize },
}

fn ensure_positive(name: &'static str, value: f64) -> Result<f64, SpectroError> {
    if !value.is_finite() {
        return Err(SpectroError::NonFinite { name, value });
    }
    if value <= 0.0 {
        return Err(SpectroError::NonPositive { name, value });
    }
    Ok(value)
}

/// Vacuum wavelength (nm) to optical frequency (Hz), ν = c/λ.
pub fn wavelength_to_frequency(lambda_vac_nm: f64) -> Result<f64, SpectroError> {
    ensure_positive("lambda_vac_nm", lambda_vac_nm)?;
    Ok(SPEED_OF_LIGHT / (lambda_vac_nm * 1e-9))
}

/// Optical frequency (Hz) to vacuum wavelength (nm).
pub fn frequency_to_wavelength(nu_hz: f64) -> Result<f64, SpectroError> {
    ensure_positive("nu_hz", nu_hz)?;
    Ok(SPEED_OF_LIGHT / nu_hz * 1e9)
}

/// First-order wavelength interval to frequency interval: Δν = c·Δλ/λ₀².
pub fn delta_lambda_to_delta_nu(delta_lambda_nm: f64, lambda0_nm: f64) -> Result<f64, SpectroError> {
    if !delta_lambda_nm.is_finite() {
        return Err(SpectroError::NonFinite { name: "delta_lambda_nm", value: delta_lambda_nm });
    }
    ensure_positive("lambda0_nm", lambda0_nm)?;
    let lambda0_m = lambda0_nm * 1e-9;
    Ok(SPEED_OF_LIGHT * (delta_lambda_nm * 1e-9) / (lambda0_m * lambda0_m))
}

/// Wavenumber (cm⁻¹) to frequency (Hz); 1 cm⁻¹ = 29.9792458 GHz.
pub fn wavenumber_to_frequency(k_inv_cm: f64) -> Result<f64, SpectroError> {
    if !k_inv_cm.is_finite() {
        return Err(SpectroError::NonFinite { name: "k_inv_cm", value: k_inv_cm });
    }
    Ok(k_inv_cm * SPEED_OF_LIGHT * 100.0)
}

/// Optical coherence lifetime from the homogeneous linewidth, T₂ = 1/(π·Γ_h).
pub fn t2_from_linewidth(gamma_h_hz: f64) -> Result<f64, SpectroError> {
    ensure_positive("gamma_h_hz", gamma_h_hz)?;
    Ok(1.0 / (std::f64::consts::PI * gamma_h_hz))
}

/// Homogeneous linewidth from the coherence lifetime, Γ_h = 1/(π·T₂).
pub fn linewidth_from_t2(t2_s: f64) -> Result<f64, SpectroError> {
    ensure_positive("t2_s", t2_s)?;
    Ok(1.0 / (std::f64::consts::PI * t2_s))
}

/// Homogeneous linewidth from a measured hole width.
///
/// Uses Lorentzian width additivity, Γ_hole = 2Γ_h + 2Γ_laser, so
/// Γ_h = (Γ_hole − 2Γ_laser)/2. With `gamma_laser_hz = 0` this is the
/// plain Γ_hole/2.
pub fn homogeneous_from_hole(gamma_hole_hz: f64, gamma_laser_hz: f64) -> Result<f64, SpectroError> {
    ensure_positive("gamma_hole_hz", gamma_hole_hz)?;
    if !gamma_laser_hz.is_finite() || gamma_laser_hz < 0.0 {
        return Err(SpectroError::NonFinite { name: "gamma_laser_hz", value: gamma_laser_hz });
    }
    if gamma_hole_hz <= 2.0 * gamma_laser_hz {
        return Err(SpectroError::HoleNarrowerThanLaser {
            gamma_hole: gamma_hole_hz,
            gamma_laser: gamma_laser_hz,
        });
    }
    Ok((gamma_hole_hz - 2.0 * gamma_laser_hz) / 2.0)
}

/// Area-normalized Lorentzian density (per Hz): ∫ dx = 1, peak 2/(π·fwhm).
pub fn lorentzian(x: f64, x0: f64, fwhm: f64) -> Result<f64, SpectroError> {
    ensure_positive("fwhm", fwhm)?;
    Ok(lorentzian_unchecked(x, x0, fwhm))
}

/// Area-normalized Gaussian density (per Hz): peak (2/fwhm)·√(ln2/π).
pub fn gaussian(x: f64, x0: f64, fwhm: f64) -> Result<f64, SpectroError> {
    ensure_positive("fwhm", fwhm)?;
    Ok(gaussian_unchecked(x, x0, fwhm))
}

/// `lorentzian` without the width check, for use in validated hot loops.
#[inline]
pub(crate) fn lorentzian_unchecked(x: f64, x0: f64, fwhm: f64) -> f64 {
    let hw = fwhm / 2.0;
    hw / (std::f64::consts::PI * ((x - x0) * (x - x0) + hw * hw))
}

#[inline]
pub(crate) fn gaussian_unchecked(x: f64, x0: f64, fwhm: f64) -> f64 {
    let ln2 = std::f64::consts::LN_2;
    let d = x - x0;
    (2.0 / fwhm) * (ln2 / std::f64::consts::PI).sqrt() * (-4.0 * ln2 * d * d / (fwhm * fwhm)).exp()
}

/// Peak-normalized Lorentzian, value 1 at x0, 1/2 at x0 ± fwhm/2.
#[inline]
pub(crate) fn lorentzian_peak_normalized(x: f64, x0: f64, fwhm: f64) -> f64 {
    let hw = fwhm / 2.0;
    hw * hw / ((x - x0) * (x - x0) + hw * hw)
}

/// The linewidth set of one hole-burning configuration, all Hz FWHM.
///
/// Validity of the hole-burning regime (Γ_inh ≫ Γ_h ≫ Γ_laser) is not
/// enforced on construction; see `pump::validate_shb_regime`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Linewidths {
    pub gamma_h: f64,
    pub gamma_inh: f64,
    pub gamma_laser: f64,
    pub gamma_hole: f64,
}

impl Linewidths {
    pub fn validate(&self) -> Result<(), SpectroError> {
        for (name, v) in [
            ("gamma_h", self.gamma_h),
            ("gamma_inh", self.gamma_inh),
            ("gamma_laser", self.gamma_laser),
            ("gamma_hole", self.gamma_hole),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(SpectroError::NonFinite { name, value: v });
            }
        }
        Ok(())
    }
}

/// What the axis of a [`Spectrum`] means.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxisKind {
    /// Absolute optical frequency, Hz.
    AbsoluteFrequency,
    /// Detuning from a reference frequency, Hz.
    Detuning,
    /// Vacuum wavelength, nm.
    Wavelength,
}

/// A sampled spectrum: strictly monotonic axis plus one value per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    axis: Vec<f64>,
    values: Vec<f64>,
    axis_kind: AxisKind,
}

impl Spectrum {
    pub fn new(axis: Vec<f64>, values: Vec<f64>, axis_kind: AxisKind) -> Result<Self, SpectroError> {
        if axis.len() != values.len() {
            return Err(SpectroError::LengthMismatch { axis: axis.len(), values: values.len() });
        }
        let increasing = axis.len() < 2 || axis[1] > axis[0];
        for i in 1..axis.len() {
            let ok = if increasing { axis[i] > axis[i - 1] } else { axis[i] < axis[i - 1] };
            if !ok || !axis[i].is_finite() {
                return Err(SpectroError::NonMonotonicAxis { index: i });
            }
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SpectroError::NonFiniteSample { index: i });
        }
        Ok(Self { axis, values, axis_kind })
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn axis_kind(&self) -> AxisKind {
        self.axis_kind
    }

    pub fn len(&self) -> usize {
        self.axis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axis.is_empty()
    }

    /// Map the values through `f`, keeping the axis.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<Self, SpectroError> {
        Self::new(self.axis.clone(), self.values.iter().map(|&v| f(v)).collect(), self.axis_kind)
    }

    /// Replace the values wholesale; lengths must match.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, SpectroError> {
        Self::new(self.axis.clone(), values, self.axis_kind)
    }
}

/// Evenly spaced axis of `n` points covering `[center - span/2, center + span/2]`
/// at interval midpoints (so scanning pulses and readout share the same grid).
pub fn midpoint_axis(center: f64, span: f64, n: usize) -> Vec<f64> {
    let step = span / n as f64;
    (0..n).map(|i| center - span / 2.0 + (i as f64 + 0.5) * step).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    #[test]
    fn wavelength_conversion_reference_values() {
        // 580.185 nm -> 516.72 THz, hand-checked against c/λ
        let nu = wavelength_to_frequency(580.185).unwrap();
        assert_relative_eq!(nu, 516.72e12, max_relative = 2e-5);
        // c expressed in nm/s gives exactly 1 PHz
        assert_relative_eq!(wavelength_to_frequency(299.792458).unwrap(), 1e15, max_relative = 1e-14);
        assert!(wavelength_to_frequency(0.0).is_err());
        assert!(wavelength_to_frequency(-1.0).is_err());
        assert!(wavelength_to_frequency(f64::NAN).is_err());
    }

    #[test]
    fn delta_lambda_reference_values() {
        // 0.06 nm at 580.185 nm -> 53.44 GHz (the quoted "50 GHz" is rounded)
        let dnu = delta_lambda_to_delta_nu(0.06, 580.185).unwrap();
        assert_relative_eq!(dnu, 53.4366e9, max_relative = 1e-4);
        assert_eq!(delta_lambda_to_delta_nu(0.0, 580.185).unwrap(), 0.0);
        // linearity
        let one = delta_lambda_to_delta_nu(0.03, 580.185).unwrap();
        let two = delta_lambda_to_delta_nu(0.06, 580.185).unwrap();
        assert_relative_eq!(two, 2.0 * one, max_relative = 1e-14);
        assert!(delta_lambda_to_delta_nu(0.06, 0.0).is_err());
    }

    #[test]
    fn wavenumber_reference_values() {
        assert_relative_eq!(wavenumber_to_frequency(1.7).unwrap(), 50.9647e9, max_relative = 1e-5);
        assert_relative_eq!(wavenumber_to_frequency(1.0).unwrap(), 29.9792458e9, max_relative = 1e-14);
        assert_eq!(wavenumber_to_frequency(0.0).unwrap(), 0.0);
    }

    #[test]
    fn coherence_lifetime_reference_values() {
        // 22 MHz -> 14.47 ns; 21.5 MHz -> 14.81 ns
        assert_relative_eq!(t2_from_linewidth(22e6).unwrap(), 14.4686e-9, max_relative = 1e-4);
        assert_relative_eq!(t2_from_linewidth(21.5e6).unwrap(), 14.8051e-9, max_relative = 1e-4);
        // 1/π Hz -> 1 s
        assert_relative_eq!(
            t2_from_linewidth(1.0 / std::f64::consts::PI).unwrap(),
            1.0,
            max_relative = 1e-14
        );
        assert!(t2_from_linewidth(0.0).is_err());
        assert!(linewidth_from_t2(-1.0).is_err());
    }

    #[test]
    fn hole_deconvolution() {
        assert_relative_eq!(homogeneous_from_hole(43e6, 0.0).unwrap(), 21.5e6, max_relative = 1e-14);
        assert_relative_eq!(homogeneous_from_hole(43e6, 0.25e6).unwrap(), 21.25e6, max_relative = 1e-14);
        assert_relative_eq!(homogeneous_from_hole(2.0 * 7.0, 0.0).unwrap(), 7.0, max_relative = 1e-14);
        assert!(homogeneous_from_hole(0.4e6, 0.25e6).is_err());
    }

    #[test]
    fn lineshape_peaks_and_half_maxima() {
        let w = 5e6;
        let x0 = 1e9;
        let lp = lorentzian(x0, x0, w).unwrap();
        assert_relative_eq!(lp, 2.0 / (std::f64::consts::PI * w), max_relative = 1e-14);
        assert_relative_eq!(lorentzian(x0 + w / 2.0, x0, w).unwrap(), lp / 2.0, max_relative = 1e-12);
        assert_relative_eq!(lorentzian(x0 - w / 2.0, x0, w).unwrap(), lp / 2.0, max_relative = 1e-12);

        let gp = gaussian(x0, x0, w).unwrap();
        let expected = (2.0 / w) * (std::f64::consts::LN_2 / std::f64::consts::PI).sqrt();
        assert_relative_eq!(gp, expected, max_relative = 1e-14);
        assert_relative_eq!(gaussian(x0 + w / 2.0, x0, w).unwrap(), gp / 2.0, max_relative = 1e-12);

        assert!(lorentzian(0.0, 0.0, 0.0).is_err());
        assert!(gaussian(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn lineshapes_integrate_to_one() {
        // trapezoid quadrature over ±50·fwhm as the independent check
        let w = 3.0;
        let n = 200_001;
        let span = 100.0 * w;
        let dx = span / (n - 1) as f64;
        let mut lor_sum = 0.0;
        let mut gau_sum = 0.0;
        for i in 0..n {
            let x = -span / 2.0 + i as f64 * dx;
            let edge = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            lor_sum += edge * lorentzian_unchecked(x, 0.0, w);
            gau_sum += edge * gaussian_unchecked(x, 0.0, w);
        }
        assert_relative_eq!(lor_sum * dx, 1.0, max_relative = 0.01);
        assert_relative_eq!(gau_sum * dx, 1.0, max_relative = 1e-6);
    }

    #[test]
    fn spectrum_rejects_bad_input() {
        assert!(Spectrum::new(vec![0.0, 1.0, 1.0], vec![0.0; 3], AxisKind::Detuning).is_err());
        assert!(Spectrum::new(vec![0.0, 1.0], vec![0.0; 3], AxisKind::Detuning).is_err());
        assert!(Spectrum::new(vec![0.0, 1.0], vec![0.0, f64::NAN], AxisKind::Detuning).is_err());
        // decreasing axes are allowed as long as they are strictly monotonic
        assert!(Spectrum::new(vec![2.0, 1.0, 0.0], vec![0.0; 3], AxisKind::Wavelength).is_ok());
    }

    proptest! {
        #[test]
        fn conversion_round_trips(lambda in 100.0_f64..2000.0) {
            let nu = wavelength_to_frequency(lambda).unwrap();
            let back = frequency_to_wavelength(nu).unwrap();
            prop_assert!((back - lambda).abs() / lambda < 1e-12);
        }

        #[test]
        fn t2_round_trip(gamma in 1.0_f64..1e12) {
            let t2 = t2_from_linewidth(gamma).unwrap();
            let back = linewidth_from_t2(t2).unwrap();
            prop_assert!((back - gamma).abs() / gamma < 1e-12);
        }

        #[test]
        fn lineshapes_symmetric(d in 0.0_f64..1e9, w in 1.0_f64..1e8, x0 in -1e9_f64..1e9) {
            let l1 = lorentzian_unchecked(x0 + d, x0, w);
            let l2 = lorentzian_unchecked(x0 - d, x0, w);
            prop_assert_eq!(l1, l2);
            let g1 = gaussian_unchecked(x0 + d, x0, w);
            let g2 = gaussian_unchecked(x0 - d, x0, w);
            prop_assert_eq!(g1, g2);
        }

        #[test]
        fn first_order_interval_matches_exact(dl in 1e-6_f64..0.5) {
            // |ν(λ) − ν(λ+Δλ)| matches c·Δλ/λ² within 0.1% for Δλ/λ ≤ 1e-3
            let lambda = 580.185;
            prop_assume!(dl / lambda <= 1e-3);
            let exact = wavelength_to_frequency(lambda).unwrap()
                - wavelength_to_frequency(lambda + dl).unwrap();
            let first_order = delta_lambda_to_delta_nu(dl, lambda).unwrap();
            prop_assert!((exact - first_order).abs() / first_order < 1e-3);
        }
    }

    #[test]
    fn midpoint_axis_is_centered() {
        let ax = midpoint_axis(0.0, 200e6, 1024);
        assert_eq!(ax.len(), 1024);
        assert_abs_diff_eq!(ax[0] + ax[1023], 0.0, epsilon = 1e-3);
        assert!(ax[0] > -100e6 && ax[1023] < 100e6);
    }
}
