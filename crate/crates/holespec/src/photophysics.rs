//! Closed-form photophysical quantities: radiative lifetime, intrinsic
//! quantum yield, sensitization efficiency, emission-band bookkeeping and
//! CIE 1931 chromaticity.

use crate::spectro::{gaussian_unchecked, AxisKind, Spectrum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PhotoError {
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("observed lifetime {tau_obs} s exceeds radiative lifetime {tau_rad} s")]
    UnphysicalLifetimes { tau_obs: f64, tau_rad: f64 },
    #[error("total quantum yield {q_tot} exceeds intrinsic quantum yield {q_eu}")]
    UnphysicalYields { q_tot: f64, q_eu: f64 },
    #[error("emission bands must be non-negative with a positive total")]
    BadBands,
    #[error("magnetic-dipole band intensity must be positive for the lifetime ratio")]
    ZeroMagneticDipoleBand,
    #[error("spectrum must be sampled on a wavelength axis")]
    NotWavelengthAxis,
    #[error("spectrum is zero everywhere")]
    AllZeroSpectrum,
    #[error("spectrum values must be non-negative")]
    NegativeSpectrum,
    #[error("color-matching table malformed at line {line}: {reason}")]
    BadCmfTable { line: usize, reason: String },
}

/// Number of emission bands tracked: transitions to J = 0…6.
pub const N_BANDS: usize = 7;

/// Integrated emission intensities per ⁵D₀→⁷F_J band, J = 0…6, in any
/// consistent unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionBands {
    pub intensities: [f64; N_BANDS],
}

impl EmissionBands {
    pub fn new(intensities: [f64; N_BANDS]) -> Result<Self, PhotoError> {
        if intensities.iter().any(|&v| !v.is_finite() || v < 0.0) {
            return Err(PhotoError::BadBands);
        }
        if intensities.iter().sum::<f64>() <= 0.0 {
            return Err(PhotoError::BadBands);
        }
        Ok(Self { intensities })
    }

    pub fn total(&self) -> f64 {
        self.intensities.iter().sum()
    }

    /// I_tot / I_MD with the magnetic-dipole band J = 1.
    pub fn total_over_md(&self) -> Result<f64, PhotoError> {
        if self.intensities[1] <= 0.0 {
            return Err(PhotoError::ZeroMagneticDipoleBand);
        }
        Ok(self.total() / self.intensities[1])
    }
}

/// The full parameter set around the lifetime/yield algebra.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotophysicalParams {
    /// Spontaneous emission probability of the magnetic-dipole transition
    /// in vacuum, s⁻¹.
    pub a_md_per_s: f64,
    /// Refractive index of the host.
    pub refractive_index: f64,
    pub tau_obs_s: f64,
    pub tau_rad_s: f64,
    pub q_tot: f64,
    pub q_intrinsic: f64,
    pub eta_sens: f64,
}

fn positive(name: &'static str, value: f64) -> Result<f64, PhotoError> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(PhotoError::NonPositive { name, value });
    }
    Ok(value)
}

/// Radiative lifetime: τ_rad = [A_MD · n³ · (I_tot/I_MD)]⁻¹.
pub fn radiative_lifetime(
    a_md_per_s: f64,
    refractive_index: f64,
    i_tot_over_i_md: f64,
) -> Result<f64, PhotoError> {
    positive("a_md_per_s", a_md_per_s)?;
    positive("refractive_index", refractive_index)?;
    positive("i_tot_over_i_md", i_tot_over_i_md)?;
    Ok(1.0 / (a_md_per_s * refractive_index.powi(3) * i_tot_over_i_md))
}

/// Intrinsic quantum yield: Q = τ_obs / τ_rad, with τ_obs ≤ τ_rad.
pub fn intrinsic_quantum_yield(tau_obs_s: f64, tau_rad_s: f64) -> Result<f64, PhotoError> {
    positive("tau_obs_s", tau_obs_s)?;
    positive("tau_rad_s", tau_rad_s)?;
    if tau_obs_s > tau_rad_s {
        return Err(PhotoError::UnphysicalLifetimes { tau_obs: tau_obs_s, tau_rad: tau_rad_s });
    }
    Ok(tau_obs_s / tau_rad_s)
}

/// Sensitization efficiency: η = Q_tot / Q_intrinsic, with Q_tot ≤ Q_intrinsic.
pub fn sensitization_efficiency(q_tot: f64, q_intrinsic: f64) -> Result<f64, PhotoError> {
    positive("q_intrinsic", q_intrinsic)?;
    if !(q_tot >= 0.0) || !q_tot.is_finite() {
        return Err(PhotoError::NonPositive { name: "q_tot", value: q_tot });
    }
    if q_tot > q_intrinsic {
        return Err(PhotoError::UnphysicalYields { q_tot, q_eu: q_intrinsic });
    }
    Ok(q_tot / q_intrinsic)
}

/// Asymmetry ratio R₂₁ = I(J=2)/I(J=1).
pub fn asymmetry_ratio(bands: &EmissionBands) -> Result<f64, PhotoError> {
    if bands.intensities[1] <= 0.0 {
        return Err(PhotoError::ZeroMagneticDipoleBand);
    }
    Ok(bands.intensities[2] / bands.intensities[1])
}

/// Band fractions of the total emission; sums to 1.
pub fn emission_fractions(bands: &EmissionBands) -> Result<[f64; N_BANDS], PhotoError> {
    let total = bands.total();
    if total <= 0.0 {
        return Err(PhotoError::BadBands);
    }
    let mut out = [0.0; N_BANDS];
    for (o, &v) in out.iter_mut().zip(&bands.intensities) {
        *o = v / total;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// CIE 1931 chromaticity
// ---------------------------------------------------------------------------

/// CIE 1931 2° standard observer color-matching functions, bundled on a
/// 1 nm grid from 380 to 780 nm (wavelength, x̄, ȳ, z̄ per row).
pub const CMF_TABLE_CSV: &str = include_str!("../data/cie_1931_2deg_1nm.csv");

/// One row of the color-matching table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmfRow {
    pub wavelength_nm: f64,
    pub xbar: f64,
    pub ybar: f64,
    pub zbar: f64,
}

/// Parse the bundled table (or a caller-provided one in the same format).
pub fn parse_cmf_table(csv: &str) -> Result<Vec<CmfRow>, PhotoError> {
    let mut rows = Vec::with_capacity(401);
    for (i, line) in csv.lines().enumerate() {
        if i == 0 {
            continue; // header
        }
        let mut fields = line.split(',');
        let mut next = |name: &str| -> Result<f64, PhotoError> {
            fields
                .next()
                .ok_or_else(|| PhotoError::BadCmfTable { line: i + 1, reason: format!("missing {name}") })?
                .trim()
                .parse::<f64>()
                .map_err(|e| PhotoError::BadCmfTable { line: i + 1, reason: format!("{name}: {e}") })
        };
        rows.push(CmfRow {
            wavelength_nm: next("wavelength")?,
            xbar: next("xbar")?,
            ybar: next("ybar")?,
            zbar: next("zbar")?,
        });
    }
    if rows.len() < 2 {
        return Err(PhotoError::BadCmfTable { line: 0, reason: "table too short".into() });
    }
    Ok(rows)
}

fn interpolate_cmf(rows: &[CmfRow], wavelength_nm: f64) -> (f64, f64, f64) {
    let first = rows[0].wavelength_nm;
    let last = rows[rows.len() - 1].wavelength_nm;
    if wavelength_nm < first || wavelength_nm > last {
        return (0.0, 0.0, 0.0);
    }
    let pos = (wavelength_nm - first) / (last - first) * (rows.len() - 1) as f64;
    let i = (pos.floor() as usize).min(rows.len() - 2);
    let f = pos - i as f64;
    let (a, b) = (&rows[i], &rows[i + 1]);
    (
        a.xbar + f * (b.xbar - a.xbar),
        a.ybar + f * (b.ybar - a.ybar),
        a.zbar + f * (b.zbar - a.zbar),
    )
}

/// Chromaticity coordinates (x, y) of an emission spectrum sampled over
/// wavelength (nm): trapezoid integration against the bundled CIE 1931 2°
/// color-matching functions.
pub fn cie_xy(spectrum: &Spectrum) -> Result<(f64, f64), PhotoError> {
    if spectrum.axis_kind() != AxisKind::Wavelength {
        return Err(PhotoError::NotWavelengthAxis);
    }
    if spectrum.values().iter().any(|&v| v < 0.0) {
        return Err(PhotoError::NegativeSpectrum);
    }
    if spectrum.values().iter().all(|&v| v == 0.0) {
        return Err(PhotoError::AllZeroSpectrum);
    }
    let rows = parse_cmf_table(CMF_TABLE_CSV)?;
    let axis = spectrum.axis();
    let values = spectrum.values();
    let (mut x_total, mut y_total, mut z_total) = (0.0, 0.0, 0.0);
    for i in 1..axis.len() {
        let dl = (axis[i] - axis[i - 1]).abs();
        let (xa, ya, za) = interpolate_cmf(&rows, axis[i - 1]);
        let (xb, yb, zb) = interpolate_cmf(&rows, axis[i]);
        x_total += 0.5 * dl * (xa * values[i - 1] + xb * values[i]);
        y_total += 0.5 * dl * (ya * values[i - 1] + yb * values[i]);
        z_total += 0.5 * dl * (za * values[i - 1] + zb * values[i]);
    }
    let sum = x_total + y_total + z_total;
    if sum <= 0.0 {
        return Err(PhotoError::AllZeroSpectrum);
    }
    Ok((x_total / sum, y_total / sum))
}

/// Nominal emission wavelengths (nm) of the ⁵D₀→⁷F_J bands, J = 0…6.
pub const BAND_WAVELENGTHS_NM: [f64; N_BANDS] = [580.0, 592.0, 616.0, 650.0, 700.0, 745.0, 818.0];

/// Synthetic narrow-band emission spectrum from band intensities: one
/// Gaussian (FWHM `band_fwhm_nm`) per band at its nominal wavelength.
pub fn synthetic_band_spectrum(
    bands: &EmissionBands,
    band_fwhm_nm: f64,
    step_nm: f64,
) -> Result<Spectrum, PhotoError> {
    positive("band_fwhm_nm", band_fwhm_nm)?;
    positive("step_nm", step_nm)?;
    let (lo, hi) = (380.0, 860.0);
    let n = ((hi - lo) / step_nm).round() as usize + 1;
    let axis: Vec<f64> = (0..n).map(|i| lo + i as f64 * step_nm).collect();
    let values: Vec<f64> = axis
        .iter()
        .map(|&wl| {
            bands
                .intensities
                .iter()
                .zip(&BAND_WAVELENGTHS_NM)
                .map(|(&intensity, &center)| intensity * gaussian_unchecked(wl, center, band_fwhm_nm))
                .sum()
        })
        .collect();
    Spectrum::new(axis, values, AxisKind::Wavelength)
        .map_err(|_| PhotoError::BadCmfTable { line: 0, reason: "axis construction failed".into() })
}
