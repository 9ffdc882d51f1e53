//! Deterministic nonlinear least-squares with the three model families
//! used throughout the analysis: Lorentzian plus baseline (holes),
//! Gaussian mixture (excitation spectra), single exponential plus offset
//! (decays).
//!
//! The engine is damped Gauss–Newton with multiplicative damping
//! adaptation: the damping factor starts at 1e-3, is multiplied by 10
//! whenever a step increases the cost and divided by 10 on acceptance.
//! Convergence is declared when the relative cost decrease drops below
//! 1e-10 or the gradient norm below 1e-8, within at most 200 iterations.
//! Non-convergence is reported through [`FitResult::converged`], never as
//! an error.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FitError {
    #[error("need at least {needed} data points for {params} parameters, got {got}")]
    InsufficientData { needed: usize, params: usize, got: usize },
    #[error("data contains non-finite values")]
    NonFiniteData,
    #[error("series has no dynamic range (max = min)")]
    ZeroDynamicRange,
    #[error("time span {span} too short for initial time constant {tau_init} (need span >= 0.3 tau)")]
    InsufficientSpan { span: f64, tau_init: f64 },
    #[error("number of peaks must be in [1, 5], got {0}")]
    BadPeakCount(usize),
    #[error("initial guess has {got} entries, model needs {needed}")]
    BadInitialGuess { needed: usize, got: usize },
}

/// One fitted parameter with its standard uncertainty from the
/// residual-variance-scaled linearized covariance at the optimum.
#[derive(Debug, Clone, PartialEq)]
pub struct FitParameter {
    pub name: String,
    pub value: f64,
    pub std_err: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub parameters: Vec<FitParameter>,
    pub residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Jacobian at the optimum is numerically rank-deficient: some
    /// parameter combination is unidentifiable from the data.
    pub rank_deficient: bool,
}

impl FitResult {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.parameters.iter().find(|p| p.name == name).map(|p| p.value)
    }

    pub fn std_err(&self, name: &str) -> Option<f64> {
        self.parameters.iter().find(|p| p.name == name).map(|p| p.std_err)
    }
}

/// A least-squares model: y(x; θ) with analytic partial derivatives.
pub trait FitModel {
    fn n_params(&self) -> usize;
    fn eval(&self, x: f64, params: &[f64]) -> f64;
    /// Fill `out` with ∂y/∂θ_i at `x`.
    fn jacobian_row(&self, x: f64, params: &[f64], out: &mut [f64]);
    fn param_names(&self) -> Vec<String>;
    fn param_units(&self, axis_unit: &str, value_unit: &str) -> Vec<String>;
}

/// How the engine obtains derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianMode {
    #[default]
    Analytic,
    /// Central differences with relative step 1e-6 (absolute floor 1e-12).
    FiniteDifference,
}

#[derive(Debug, Clone, Copy)]
pub struct EngineOptions {
    pub max_iterations: usize,
    pub cost_tol: f64,
    pub gradient_tol: f64,
    pub initial_damping: f64,
    pub jacobian: JacobianMode,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            cost_tol: 1e-10,
            gradient_tol: 1e-8,
            initial_damping: 1e-3,
            jacobian: JacobianMode::Analytic,
        }
    }
}

pub const FD_RELATIVE_STEP: f64 = 1e-6;
const RANK_TOL: f64 = 1e-12;

fn jacobian_matrix(
    model: &dyn FitModel,
    xs: &[f64],
    params: &[f64],
    mode: JacobianMode,
) -> DMatrix<f64> {
    let (n, p) = (xs.len(), params.len());
    let mut jac = DMatrix::zeros(n, p);
    match mode {
        JacobianMode::Analytic => {
            let mut row = vec![0.0; p];
            for (i, &x) in xs.iter().enumerate() {
                model.jacobian_row(x, params, &mut row);
                for (j, &v) in row.iter().enumerate() {
                    jac[(i, j)] = v;
                }
            }
        }
        JacobianMode::FiniteDifference => {
            let mut plus = params.to_vec();
            let mut minus = params.to_vec();
            for j in 0..p {
                let h = FD_RELATIVE_STEP * params[j].abs().max(1e-6);
                plus[j] = params[j] + h;
                minus[j] = params[j] - h;
                for (i, &x) in xs.iter().enumerate() {
                    jac[(i, j)] = (model.eval(x, &plus) - model.eval(x, &minus)) / (2.0 * h);
                }
                plus[j] = params[j];
                minus[j] = params[j];
            }
        }
    }
    jac
}

fn cost_of(model: &dyn FitModel, xs: &[f64], ys: &[f64], params: &[f64]) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - model.eval(x, params);
            r * r
        })
        .sum()
}

/// Iterative damped Gauss–Newton minimization of Σ (y − model)².
pub fn damped_least_squares(
    model: &dyn FitModel,
    xs: &[f64],
    ys: &[f64],
    initial: &[f64],
    options: &EngineOptions,
) -> Result<FitResult, FitError> {
    let p = model.n_params();
    if initial.len() != p {
        return Err(FitError::BadInitialGuess { needed: p, got: initial.len() });
    }
    if xs.len() < 2 * p {
        return Err(FitError::InsufficientData { needed: 2 * p, params: p, got: xs.len() });
    }
    if xs.iter().chain(ys).chain(initial).any(|v| !v.is_finite()) {
        return Err(FitError::NonFiniteData);
    }

    let mut params = DVector::from_column_slice(initial);
    let mut cost = cost_of(model, xs, ys, params.as_slice());
    let mut lambda = options.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..options.max_iterations {
        iterations = iter + 1;
        let jac = jacobian_matrix(model, xs, params.as_slice(), options.jacobian);
        let residuals = DVector::from_iterator(
            xs.len(),
            xs.iter().zip(ys).map(|(&x, &y)| y - model.eval(x, params.as_slice())),
        );
        let jt = jac.transpose();
        let gradient = &jt * &residuals;
        if gradient.norm() < options.gradient_tol {
            converged = true;
            break;
        }
        let jtj = &jt * &jac;

        // accept or reject up to a few damping escalations per iteration
        let mut accepted = false;
        for _ in 0..20 {
            let mut damped = jtj.clone();
            for d in 0..p {
                damped[(d, d)] += lambda;
            }
            let Some(step) = damped.clone().lu().solve(&gradient) else {
                lambda *= 10.0;
                continue;
            };
            let trial = &params + &step;
            let trial_cost = cost_of(model, xs, ys, trial.as_slice());
            if trial_cost.is_finite() && trial_cost <= cost {
                let rel_drop = if cost > 0.0 { (cost - trial_cost) / cost } else { 0.0 };
                params = trial;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-14);
                accepted = true;
                if rel_drop < options.cost_tol {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // damping saturated; treat as stalled
            converged = cost == 0.0
                || (&jt * &DVector::from_iterator(
                    xs.len(),
                    xs.iter().zip(ys).map(|(&x, &y)| y - model.eval(x, params.as_slice())),
                ))
                .norm()
                    < options.gradient_tol;
            break;
        }
        if converged {
            break;
        }
    }

    // covariance from the undamped normal matrix at the optimum
    let jac = jacobian_matrix(model, xs, params.as_slice(), options.jacobian);
    let jtj = jac.transpose() * &jac;
    let svd = jtj.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let rank_deficient = max_sv <= 0.0
        || svd.singular_values.iter().any(|&s| s < RANK_TOL * max_sv);

    let n = xs.len();
    let dof = (n - p).max(1) as f64;
    let variance = cost / dof;
    let cov_diag: Vec<f64> = match svd.pseudo_inverse(RANK_TOL * max_sv.max(f64::MIN_POSITIVE)) {
        Ok(pinv) => (0..p).map(|i| (variance * pinv[(i, i)]).max(0.0)).collect(),
        Err(_) => vec![f64::INFINITY; p],
    };

    let names = model.param_names();
    let parameters = names
        .into_iter()
        .enumerate()
        .map(|(i, name)| FitParameter {
            name,
            value: params[i],
            std_err: cov_diag[i].sqrt(),
            unit: String::new(),
        })
        .collect();

    Ok(FitResult {
        parameters,
        residual_rms: (cost / n as f64).sqrt(),
        iterations,
        converged,
        rank_deficient,
    })
}

// ---------------------------------------------------------------------------
// model families
// ---------------------------------------------------------------------------

/// Peak-normalized Lorentzian plus constant baseline:
/// y = A·(w/2)²/((x−c)² + (w/2)²) + b, parameters [center, fwhm, amplitude, baseline].
pub struct LorentzianPeakModel;

impl FitModel for LorentzianPeakModel {
    fn n_params(&self) -> usize {
        4
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        let (c, w, a, b) = (p[0], p[1], p[2], p[3]);
        let h = w / 2.0;
        let u = x - c;
        a * h * h / (u * u + h * h) + b
    }

    fn jacobian_row(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let (c, w, a, _b) = (p[0], p[1], p[2], p[3]);
        let h = w / 2.0;
        let u = x - c;
        let denom = u * u + h * h;
        let l = h * h / denom;
        out[0] = a * 2.0 * u * l * l / (h * h); // d/dc
        out[1] = a * l * (1.0 - l) / h; // d/dw
        out[2] = l; // d/dA
        out[3] = 1.0; // d/db
    }

    fn param_names(&self) -> Vec<String> {
        vec!["center".into(), "fwhm".into(), "amplitude".into(), "baseline".into()]
    }

    fn param_units(&self, axis: &str, value: &str) -> Vec<String> {
        vec![axis.into(), axis.into(), value.into(), value.into()]
    }
}

/// Sum of `n_peaks` Gaussians plus one shared baseline; parameters
/// [c₁, w₁, A₁, …, c_n, w_n, A_n, baseline].
pub struct GaussianMixtureModel {
    pub n_peaks: usize,
}

const FOUR_LN2: f64 = 4.0 * std::f64::consts::LN_2;

impl FitModel for GaussianMixtureModel {
    fn n_params(&self) -> usize {
        3 * self.n_peaks + 1
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        let mut y = p[3 * self.n_peaks];
        for i in 0..self.n_peaks {
            let (c, w, a) = (p[3 * i], p[3 * i + 1], p[3 * i + 2]);
            let u = x - c;
            y += a * (-FOUR_LN2 * u * u / (w * w)).exp();
        }
        y
    }

    fn jacobian_row(&self, x: f64, p: &[f64], out: &mut [f64]) {
        for i in 0..self.n_peaks {
            let (c, w, a) = (p[3 * i], p[3 * i + 1], p[3 * i + 2]);
            let u = x - c;
            let e = (-FOUR_LN2 * u * u / (w * w)).exp();
            out[3 * i] = a * e * 2.0 * FOUR_LN2 * u / (w * w);
            out[3 * i + 1] = a * e * 2.0 * FOUR_LN2 * u * u / (w * w * w);
            out[3 * i + 2] = e;
        }
        out[3 * self.n_peaks] = 1.0;
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.n_params());
        for i in 0..self.n_peaks {
            names.push(format!("center_{i}"));
            names.push(format!("fwhm_{i}"));
            names.push(format!("amplitude_{i}"));
        }
        names.push("baseline".into());
        names
    }

    fn param_units(&self, axis: &str, value: &str) -> Vec<String> {
        let mut units = Vec::with_capacity(self.n_params());
        for _ in 0..self.n_peaks {
            units.push(axis.into());
            units.push(axis.into());
            units.push(value.into());
        }
        units.push(value.into());
        units
    }
}

/// y = A·exp(−t/τ) + b, parameters [amplitude, tau, offset].
pub struct ExponentialDecayModel;

impl FitModel for ExponentialDecayModel {
    fn n_params(&self) -> usize {
        3
    }

    fn eval(&self, t: f64, p: &[f64]) -> f64 {
        p[0] * (-t / p[1]).exp() + p[2]
    }

    fn jacobian_row(&self, t: f64, p: &[f64], out: &mut [f64]) {
        let e = (-t / p[1]).exp();
        out[0] = e;
        out[1] = p[0] * e * t / (p[1] * p[1]);
        out[2] = 1.0;
    }

    fn param_names(&self) -> Vec<String> {
        vec!["amplitude".into(), "tau".into(), "offset".into()]
    }

    fn param_units(&self, axis: &str, value: &str) -> Vec<String> {
        vec![value.into(), axis.into(), value.into()]
    }
}

// ---------------------------------------------------------------------------
// initialization + wrappers
// ---------------------------------------------------------------------------

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Width at `level` around index `peak` by linear interpolation; falls
/// back to a tenth of the axis span if no crossing is bracketed.
fn width_at_level(xs: &[f64], ys: &[f64], peak: usize, level: f64) -> f64 {
    let span = (xs[xs.len() - 1] - xs[0]).abs();
    let cross = |mut i: usize, step: isize| -> Option<f64> {
        loop {
            let next = i as isize + step;
            if next < 0 || next as usize >= ys.len() {
                return None;
            }
            let n = next as usize;
            if (ys[i] - level) * (ys[n] - level) <= 0.0 && ys[i] != ys[n] {
                let frac = (ys[i] - level) / (ys[i] - ys[n]);
                return Some(xs[i] + frac * (xs[n] - xs[i]));
            }
            i = n;
        }
    };
    match (cross(peak, -1), cross(peak, 1)) {
        (Some(a), Some(b)) => (b - a).abs(),
        (Some(a), None) => 2.0 * (xs[peak] - a).abs(),
        (None, Some(b)) => 2.0 * (b - xs[peak]).abs(),
        (None, None) => span / 10.0,
    }
}

fn scale_normalize(ys: &[f64]) -> (Vec<f64>, f64) {
    let scale = ys.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if scale > 0.0 {
        (ys.iter().map(|v| v / scale).collect(), scale)
    } else {
        (ys.to_vec(), 1.0)
    }
}

/// Fit a Lorentzian peak plus baseline. Default initialization: center at
/// the maximum, baseline at the median, amplitude max − median, width from
/// the half-maximum crossings.
pub fn fit_lorentzian_peak(
    xs: &[f64],
    ys: &[f64],
    init: Option<[f64; 4]>,
    options: &EngineOptions,
) -> Result<FitResult, FitError> {
    if xs.len() < 64 {
        return Err(FitError::InsufficientData { needed: 64, params: 4, got: xs.len() });
    }
    let x_ref = 0.5 * (xs[0] + xs[xs.len() - 1]);
    let xs_c: Vec<f64> = xs.iter().map(|x| x - x_ref).collect();
    let (ys_n, y_scale) = scale_normalize(ys);

    let init_n = match init {
        Some([c, w, a, b]) => [c - x_ref, w, a / y_scale, b / y_scale],
        None => {
            let peak = ys_n
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            let baseline = median(&ys_n);
            let amplitude = ys_n[peak] - baseline;
            let fwhm = width_at_level(&xs_c, &ys_n, peak, baseline + amplitude / 2.0);
            [xs_c[peak], fwhm, amplitude, baseline]
        }
    };

    let mut result = damped_least_squares(&LorentzianPeakModel, &xs_c, &ys_n, &init_n, options)?;
    // un-normalize: center shifts back, widths are sign-fixed, values rescale
    for p in result.parameters.iter_mut() {
        match p.name.as_str() {
            "center" => p.value += x_ref,
            "fwhm" => p.value = p.value.abs(),
            "amplitude" | "baseline" => {
                p.value *= y_scale;
                p.std_err *= y_scale;
            }
            _ => {}
        }
    }
    result.residual_rms *= y_scale;
    Ok(result)
}

/// Fit `n_peaks` Gaussians plus a shared baseline. Initial centers are the
/// `n_peaks` highest local maxima of the 5-point-smoothed data.
pub fn fit_gaussian_mixture(
    xs: &[f64],
    ys: &[f64],
    n_peaks: usize,
    init: Option<Vec<f64>>,
    options: &EngineOptions,
) -> Result<FitResult, FitError> {
    if !(1..=5).contains(&n_peaks) {
        return Err(FitError::BadPeakCount(n_peaks));
    }
    let model = GaussianMixtureModel { n_peaks };
    let x_ref = 0.5 * (xs[0] + xs[xs.len() - 1]);
    let xs_c: Vec<f64> = xs.iter().map(|x| x - x_ref).collect();
    let (ys_n, y_scale) = scale_normalize(ys);

    let init_n: Vec<f64> = match init {
        Some(raw) => {
            if raw.len() != model.n_params() {
                return Err(FitError::BadInitialGuess { needed: model.n_params(), got: raw.len() });
            }
            let mut v = raw;
            for i in 0..n_peaks {
                v[3 * i] -= x_ref;
                v[3 * i + 2] /= y_scale;
            }
            let last = v.len() - 1;
            v[last] /= y_scale;
            v
        }
        None => {
            // 5-point moving average, then strictly-greater local maxima
            let n = ys_n.len();
            let smoothed: Vec<f64> = (0..n)
                .map(|i| {
                    let lo = i.saturating_sub(2);
                    let hi = (i + 2).min(n - 1);
                    ys_n[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
                })
                .collect();
            let mut maxima: Vec<(usize, f64)> = (1..n - 1)
                .filter(|&i| smoothed[i] > smoothed[i - 1] && smoothed[i] > smoothed[i + 1])
                .map(|i| (i, smoothed[i]))
                .collect();
            maxima.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            let baseline = smoothed.iter().cloned().fold(f64::INFINITY, f64::min);
            let span = (xs_c[n - 1] - xs_c[0]).abs();
            let mut v = Vec::with_capacity(model.n_params());
            for i in 0..n_peaks {
                // fall back to evenly spread peaks if fewer maxima were found
                let (idx, height) = maxima
                    .get(i)
                    .copied()
                    .unwrap_or(((n * (i + 1)) / (n_peaks + 1), baseline + 0.1));
                let amplitude = (height - baseline).max(1e-6);
                let fwhm = width_at_level(&xs_c, &smoothed, idx, baseline + amplitude / 2.0)
                    .min(span / n_peaks as f64);
                v.extend_from_slice(&[xs_c[idx], fwhm, amplitude]);
            }
            v.push(baseline);
            v
        }
    };

    let mut result = damped_least_squares(&model, &xs_c, &ys_n, &init_n, options)?;
    for p in result.parameters.iter_mut() {
        if p.name.starts_with("center_") {
            p.value += x_ref;
        } else if p.name.starts_with("fwhm_") {
            p.value = p.value.abs();
        } else {
            p.value *= y_scale;
            p.std_err *= y_scale;
        }
    }
    result.residual_rms *= y_scale;
    Ok(result)
}

/// Fit A·exp(−t/τ) + b. Offset initialized at the minimum, τ from a
/// log-linear regression of (value − offset).
pub fn fit_exponential(
    ts: &[f64],
    values: &[f64],
    init: Option<[f64; 3]>,
    options: &EngineOptions,
) -> Result<FitResult, FitError> {
    if ts.len() < 6 {
        return Err(FitError::InsufficientData { needed: 6, params: 3, got: ts.len() });
    }
    let (ys_n, y_scale) = scale_normalize(values);
    let init_n = match init {
        Some([a, tau, b]) => [a / y_scale, tau, b / y_scale],
        None => {
            let min = ys_n.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = ys_n.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let range = max - min;
            if !(range > 0.0) {
                return Err(FitError::ZeroDynamicRange);
            }
            // log-linear regression on points clear of the offset
            let pts: Vec<(f64, f64)> = ts
                .iter()
                .zip(&ys_n)
                .filter(|(_, &v)| v - min > 1e-3 * range)
                .map(|(&t, &v)| (t, (v - min).ln()))
                .collect();
            let n = pts.len() as f64;
            let sx: f64 = pts.iter().map(|p| p.0).sum();
            let sy: f64 = pts.iter().map(|p| p.1).sum();
            let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
            let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
            let denom = n * sxx - sx * sx;
            let span = ts[ts.len() - 1] - ts[0];
            let (slope, intercept) = if denom.abs() > 0.0 {
                ((n * sxy - sx * sy) / denom, (sy * sxx - sx * sxy) / denom)
            } else {
                (-1.0 / span, 0.0)
            };
            let tau = if slope < 0.0 { -1.0 / slope } else { span };
            [intercept.exp(), tau, min]
        }
    };
    let span = ts[ts.len() - 1] - ts[0];
    if span < 0.3 * init_n[1] {
        return Err(FitError::InsufficientSpan { span, tau_init: init_n[1] });
    }

    let mut result = damped_least_squares(&ExponentialDecayModel, ts, &ys_n, &init_n, options)?;
    for p in result.parameters.iter_mut() {
        match p.name.as_str() {
            "amplitude" | "offset" => {
                p.value *= y_scale;
                p.std_err *= y_scale;
            }
            "tau" => p.value = p.value.abs(),
            _ => {}
        }
    }
    result.residual_rms *= y_scale;
    Ok(result)
}
