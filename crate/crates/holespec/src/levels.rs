//! Hyperfine level structure of the ground and excited electronic states,
//! the nine-line optical transition table per ion, and the discretized
//! inhomogeneous ensemble.

use crate::spectro::gaussian_unchecked;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of doubly-degenerate nuclear-spin levels per electronic state
/// (±1/2, ±3/2, ±5/2 for I = 5/2).
pub const N_LEVELS: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum LevelError {
    #[error("{label:?} manifold offsets must be finite")]
    NonFiniteOffset { label: ManifoldLabel },
    #[error("{label:?} manifold gap {gap_hz} Hz outside plausibility window [{min_hz}, {max_hz}] Hz")]
    GapOutsideWindow { label: ManifoldLabel, gap_hz: f64, min_hz: f64, max_hz: f64 },
    #[error("branching row {row} sums to {sum}, expected 1 within 1e-9")]
    BranchingRowSum { row: usize, sum: f64 },
    #[error("branching entries must be non-negative (row {row}, col {col})")]
    NegativeBranching { row: usize, col: usize },
    #[error("transition strengths must be non-negative and not all zero")]
    BadStrengths,
    #[error("inhomogeneous profile component {index} invalid: {reason}")]
    BadProfileComponent { index: usize, reason: String },
    #[error("ensemble discretization needs n_classes >= 3 and span > 0 (got n={n}, span={span})")]
    DegenerateDiscretization { n: usize, span: f64 },
    #[error("isotope abundances sum to {sum}, expected 1 within 1e-9")]
    AbundanceSum { sum: f64 },
    #[error("isotope list must contain 1 or 2 components, got {n}")]
    IsotopeCount { n: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ManifoldLabel {
    Ground,
    Excited,
}

/// Default plausibility window for adjacent hyperfine gaps, Hz.
pub const DEFAULT_GAP_WINDOW: (f64, f64) = (1e6, 200e6);

/// Three doubly-degenerate nuclear-spin levels of one electronic state,
/// described by their frequency offsets (Hz) from the lowest level.
///
/// Offsets are sorted into canonical (non-decreasing) order on
/// construction. The adjacent gaps — the two physical splittings — must
/// fall inside the gap window; the default window is
/// [`DEFAULT_GAP_WINDOW`], and [`HyperfineManifold::with_gap_window`]
/// accepts a custom one (a zero minimum admits degenerate manifolds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperfineManifold {
    offsets_hz: [f64; N_LEVELS],
    label: ManifoldLabel,
}

impl HyperfineManifold {
    pub fn new(label: ManifoldLabel, offsets_hz: [f64; N_LEVELS]) -> Result<Self, LevelError> {
        Self::with_gap_window(label, offsets_hz, DEFAULT_GAP_WINDOW.0, DEFAULT_GAP_WINDOW.1)
    }

    pub fn with_gap_window(
        label: ManifoldLabel,
        mut offsets_hz: [f64; N_LEVELS],
        min_gap_hz: f64,
        max_gap_hz: f64,
    ) -> Result<Self, LevelError> {
        if offsets_hz.iter().any(|v| !v.is_finite()) {
            return Err(LevelError::NonFiniteOffset { label });
        }
        offsets_hz.sort_by(|a, b| a.partial_cmp(b).expect("finite offsets"));
        for w in offsets_hz.windows(2) {
            let gap = w[1] - w[0];
            if gap < min_gap_hz || gap > max_gap_hz {
                return Err(LevelError::GapOutsideWindow {
                    label,
                    gap_hz: gap,
                    min_hz: min_gap_hz,
                    max_hz: max_gap_hz,
                });
            }
        }
        Ok(Self { offsets_hz, label })
    }

    pub fn offsets_hz(&self) -> [f64; N_LEVELS] {
        self.offsets_hz
    }

    pub fn label(&self) -> ManifoldLabel {
        self.label
    }

    /// Adjacent gaps (the two physical splittings), Hz.
    pub fn gaps_hz(&self) -> [f64; N_LEVELS - 1] {
        [self.offsets_hz[1] - self.offsets_hz[0], self.offsets_hz[2] - self.offsets_hz[1]]
    }
}

/// One optical transition between ground level `ground` and excited level
/// `excited`, with its frequency offset relative to the zero-offset
/// transition and its relative strength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub ground: usize,
    pub excited: usize,
    pub offset_hz: f64,
    pub strength: f64,
}

/// The nine optical transitions between two hyperfine manifolds plus the
/// branching matrix β, where `branching[k][j]` is the probability that an
/// ion decaying from excited level k lands in ground level j.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionTable {
    transitions: [Transition; N_LEVELS * N_LEVELS],
    branching: [[f64; N_LEVELS]; N_LEVELS],
    ground: HyperfineManifold,
    excited: HyperfineManifold,
}

const BRANCHING_ROW_TOL: f64 = 1e-9;

/// Build the nine-transition table.
///
/// Offsets are Δe_k − Δg_j. `strengths[j][k]` defaults to 1 everywhere
/// and is renormalized so the largest entry is 1. `branching` defaults to
/// the uniform 1/3 matrix; rows of a supplied matrix must each sum to 1.
pub fn build_transition_table(
    ground: HyperfineManifold,
    excited: HyperfineManifold,
    strengths: Option<[[f64; N_LEVELS]; N_LEVELS]>,
    branching: Option<[[f64; N_LEVELS]; N_LEVELS]>,
) -> Result<TransitionTable, LevelError> {
    let mut strengths = strengths.unwrap_or([[1.0; N_LEVELS]; N_LEVELS]);
    let mut max_s = 0.0_f64;
    for row in &strengths {
        for &s in row {
            if !s.is_finite() || s < 0.0 {
                return Err(LevelError::BadStrengths);
            }
            max_s = max_s.max(s);
        }
    }
    if max_s <= 0.0 {
        return Err(LevelError::BadStrengths);
    }
    for row in strengths.iter_mut() {
        for s in row.iter_mut() {
            *s /= max_s;
        }
    }

    let branching = branching.unwrap_or([[1.0 / N_LEVELS as f64; N_LEVELS]; N_LEVELS]);
    for (k, row) in branching.iter().enumerate() {
        let mut sum = 0.0;
        for (j, &b) in row.iter().enumerate() {
            if !b.is_finite() || b < 0.0 {
                return Err(LevelError::NegativeBranching { row: k, col: j });
            }
            sum += b;
        }
        if (sum - 1.0).abs() > BRANCHING_ROW_TOL {
            return Err(LevelError::BranchingRowSum { row: k, sum });
        }
    }

    let g = ground.offsets_hz();
    let e = excited.offsets_hz();
    let mut transitions = [Transition { ground: 0, excited: 0, offset_hz: 0.0, strength: 0.0 };
        N_LEVELS * N_LEVELS];
    for j in 0..N_LEVELS {
        for k in 0..N_LEVELS {
            transitions[j * N_LEVELS + k] = Transition {
                ground: j,
                excited: k,
                offset_hz: e[k] - g[j],
                strength: strengths[j][k],
            };
        }
    }
    Ok(TransitionTable { transitions, branching, ground, excited })
}

impl TransitionTable {
    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn transition(&self, ground: usize, excited: usize) -> &Transition {
        &self.transitions[ground * N_LEVELS + excited]
    }

    pub fn branching(&self) -> &[[f64; N_LEVELS]; N_LEVELS] {
        &self.branching
    }

    pub fn ground(&self) -> &HyperfineManifold {
        &self.ground
    }

    pub fn excited(&self) -> &HyperfineManifold {
        &self.excited
    }

    pub fn min_offset_hz(&self) -> f64 {
        self.transitions.iter().map(|t| t.offset_hz).fold(f64::INFINITY, f64::min)
    }

    pub fn max_offset_hz(&self) -> f64 {
        self.transitions.iter().map(|t| t.offset_hz).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// One Gaussian component of the inhomogeneous frequency distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    /// Center offset from the reference frequency, Hz.
    pub center_hz: f64,
    /// FWHM, Hz.
    pub fwhm_hz: f64,
    /// Relative weight (> 0; weights are normalized internally).
    pub weight: f64,
}

/// Weighted Gaussian mixture describing emitter-to-emitter frequency
/// shifts. Total area is 1 regardless of how the weights are scaled.
#[derive(Debug, Clone, PartialEq)]
pub struct InhomogeneousProfile {
    components: Vec<GaussianComponent>,
    weight_sum: f64,
}

impl InhomogeneousProfile {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self, LevelError> {
        if components.is_empty() {
            return Err(LevelError::BadProfileComponent {
                index: 0,
                reason: "profile needs at least one component".into(),
            });
        }
        for (i, c) in components.iter().enumerate() {
            if !c.center_hz.is_finite() {
                return Err(LevelError::BadProfileComponent { index: i, reason: "non-finite center".into() });
            }
            if !(c.fwhm_hz > 0.0) || !c.fwhm_hz.is_finite() {
                return Err(LevelError::BadProfileComponent { index: i, reason: "fwhm must be > 0".into() });
            }
            if !(c.weight > 0.0) || !c.weight.is_finite() {
                return Err(LevelError::BadProfileComponent { index: i, reason: "weight must be > 0".into() });
            }
        }
        let weight_sum = components.iter().map(|c| c.weight).sum();
        Ok(Self { components, weight_sum })
    }

    /// Single Gaussian centered at zero offset.
    pub fn single(fwhm_hz: f64) -> Result<Self, LevelError> {
        Self::new(vec![GaussianComponent { center_hz: 0.0, fwhm_hz, weight: 1.0 }])
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    /// Profile density at detuning `delta_hz` (per Hz, integral 1).
    pub fn density(&self, delta_hz: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight / self.weight_sum * gaussian_unchecked(delta_hz, c.center_hz, c.fwhm_hz))
            .sum()
    }

    /// Shift every component center by `delta_hz`.
    pub fn shifted(&self, delta_hz: f64) -> Self {
        let components = self
            .components
            .iter()
            .map(|c| GaussianComponent { center_hz: c.center_hz + delta_hz, ..*c })
            .collect();
        Self { components, weight_sum: self.weight_sum }
    }
}

/// Weighted sum of area-normalized Gaussians at `delta_hz`.
pub fn inhomogeneous_density(profile: &InhomogeneousProfile, delta_hz: f64) -> f64 {
    profile.density(delta_hz)
}

/// One discretized sub-ensemble: all ions detuned by `detuning_hz` from
/// the reference frequency, carrying a fraction `weight` of the total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IonClass {
    pub detuning_hz: f64,
    pub weight: f64,
}

/// Discretize `profile` into `n_classes` uniformly spaced classes covering
/// `[-span/2, +span/2]`, weights proportional to the density and
/// renormalized to sum to 1.
pub fn discretize_ensemble(
    profile: &InhomogeneousProfile,
    span_hz: f64,
    n_classes: usize,
) -> Result<Vec<IonClass>, LevelError> {
    discretize_window(profile, -span_hz / 2.0, span_hz / 2.0, n_classes)
}

/// Discretize over an arbitrary window `[lo, hi]`; hole-burning runs use
/// an asymmetric window around the burn frequency.
pub fn discretize_window(
    profile: &InhomogeneousProfile,
    lo_hz: f64,
    hi_hz: f64,
    n_classes: usize,
) -> Result<Vec<IonClass>, LevelError> {
    let span = hi_hz - lo_hz;
    if n_classes < 3 || !(span > 0.0) || !span.is_finite() {
        return Err(LevelError::DegenerateDiscretization { n: n_classes, span });
    }
    let step = span / n_classes as f64;
    let mut classes: Vec<IonClass> = (0..n_classes)
        .map(|i| {
            let detuning_hz = lo_hz + (i as f64 + 0.5) * step;
            IonClass { detuning_hz, weight: profile.density(detuning_hz) }
        })
        .collect();
    let total: f64 = classes.iter().map(|c| c.weight).sum();
    if !(total > 0.0) {
        return Err(LevelError::DegenerateDiscretization { n: n_classes, span });
    }
    for c in classes.iter_mut() {
        c.weight /= total;
    }
    Ok(classes)
}

/// One isotope (or effective species): its own manifold pair and abundance.
#[derive(Debug, Clone, PartialEq)]
pub struct IsotopeComponent {
    pub ground: HyperfineManifold,
    pub excited: HyperfineManifold,
    pub abundance: f64,
}

/// The full ensemble model: inhomogeneous profile, its discretization, and
/// one or two isotope components.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub profile: InhomogeneousProfile,
    pub classes: Vec<IonClass>,
    pub isotopes: Vec<IsotopeComponent>,
}

impl EnsembleModel {
    pub fn new(
        profile: InhomogeneousProfile,
        classes: Vec<IonClass>,
        isotopes: Vec<IsotopeComponent>,
    ) -> Result<Self, LevelError> {
        if isotopes.is_empty() || isotopes.len() > 2 {
            return Err(LevelError::IsotopeCount { n: isotopes.len() });
        }
        let sum: f64 = isotopes.iter().map(|i| i.abundance).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(LevelError::AbundanceSum { sum });
        }
        Ok(Self { profile, classes, isotopes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    fn mhz(v: f64) -> f64 {
        v * 1e6
    }

    #[test]
    fn manifold_sorts_and_checks_gaps() {
        let m = HyperfineManifold::new(ManifoldLabel::Ground, [mhz(70.0), 0.0, mhz(30.0)]).unwrap();
        assert_eq!(m.offsets_hz(), [0.0, mhz(30.0), mhz(70.0)]);
        assert_eq!(m.gaps_hz(), [mhz(30.0), mhz(40.0)]);
        // gap below window
        assert!(HyperfineManifold::new(ManifoldLabel::Ground, [0.0, 0.5e6, mhz(30.0)]).is_err());
        // gap above window
        assert!(HyperfineManifold::new(ManifoldLabel::Excited, [0.0, mhz(250.0), mhz(500.0)]).is_err());
        // degenerate allowed with explicit window
        let d = HyperfineManifold::with_gap_window(ManifoldLabel::Excited, [0.0; 3], 0.0, f64::INFINITY);
        assert!(d.is_ok());
    }

    #[test]
    fn transition_offsets_match_hand_arithmetic() {
        let g = HyperfineManifold::new(ManifoldLabel::Ground, [0.0, mhz(30.0), mhz(70.0)]).unwrap();
        let e = HyperfineManifold::new(ManifoldLabel::Excited, [0.0, mhz(40.0), mhz(90.0)]).unwrap();
        let t = build_transition_table(g, e, None, None).unwrap();
        // (j=1, k=1): 40 - 30 = 10 MHz
        assert_relative_eq!(t.transition(1, 1).offset_hz, mhz(10.0), max_relative = 1e-14);
        assert_eq!(t.transitions().len(), 9);
        for tr in t.transitions() {
            assert_eq!(tr.strength, 1.0);
        }
        for row in t.branching() {
            for &b in row {
                assert_relative_eq!(b, 1.0 / 3.0, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn degenerate_manifolds_give_zero_offsets() {
        let z = HyperfineManifold::with_gap_window(ManifoldLabel::Ground, [0.0; 3], 0.0, f64::INFINITY)
            .unwrap();
        let t = build_transition_table(z, z, None, None).unwrap();
        for tr in t.transitions() {
            assert_eq!(tr.offset_hz, 0.0);
        }
    }

    #[test]
    fn branching_validation() {
        let g = HyperfineManifold::new(ManifoldLabel::Ground, [0.0, mhz(30.0), mhz(70.0)]).unwrap();
        let e = HyperfineManifold::new(ManifoldLabel::Excited, [0.0, mhz(40.0), mhz(90.0)]).unwrap();
        let bad = [[0.5, 0.5, 0.1], [1.0 / 3.0; 3], [1.0 / 3.0; 3]];
        assert!(matches!(
            build_transition_table(g, e, None, Some(bad)),
            Err(LevelError::BranchingRowSum { row: 0, .. })
        ));
        let neg = [[-0.1, 0.6, 0.5], [1.0 / 3.0; 3], [1.0 / 3.0; 3]];
        assert!(build_transition_table(g, e, None, Some(neg)).is_err());
        let ok = [[0.2, 0.3, 0.5], [0.1, 0.8, 0.1], [0.4, 0.4, 0.2]];
        assert!(build_transition_table(g, e, None, Some(ok)).is_ok());
    }

    #[test]
    fn strengths_normalized_to_unit_max() {
        let g = HyperfineManifold::new(ManifoldLabel::Ground, [0.0, mhz(30.0), mhz(70.0)]).unwrap();
        let e = HyperfineManifold::new(ManifoldLabel::Excited, [0.0, mhz(40.0), mhz(90.0)]).unwrap();
        let s = [[2.0, 1.0, 0.5], [0.25, 0.1, 0.0], [1.0, 1.0, 1.0]];
        let t = build_transition_table(g, e, Some(s), None).unwrap();
        let max = t.transitions().iter().map(|tr| tr.strength).fold(0.0, f64::max);
        assert_relative_eq!(max, 1.0, max_relative = 1e-14);
        assert_relative_eq!(t.transition(0, 2).strength, 0.25, max_relative = 1e-14);
        assert!(build_transition_table(g, e, Some([[0.0; 3]; 3]), None).is_err());
    }

    #[test]
    fn four_point_identity() {
        // offset(j,k) − offset(j,k') must not depend on j
        let g = HyperfineManifold::new(ManifoldLabel::Ground, [0.0, mhz(45.0), mhz(100.0)]).unwrap();
        let e = HyperfineManifold::new(ManifoldLabel::Excited, [0.0, mhz(150.0), mhz(320.0)]).unwrap();
        let t = build_transition_table(g, e, None, None).unwrap();
        for k in 0..3 {
            for kp in 0..3 {
                let d0 = t.transition(0, k).offset_hz - t.transition(0, kp).offset_hz;
                for j in 1..3 {
                    let dj = t.transition(j, k).offset_hz - t.transition(j, kp).offset_hz;
                    assert_abs_diff_eq!(d0, dj, epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn density_reference_values() {
        let p = InhomogeneousProfile::single(50e9).unwrap();
        let peak = p.density(0.0);
        let expected = (2.0 / 50e9) * (std::f64::consts::LN_2 / std::f64::consts::PI).sqrt();
        assert_relative_eq!(peak, expected, max_relative = 1e-14);
        assert_relative_eq!(p.density(25e9), peak / 2.0, max_relative = 1e-12);

        let two = InhomogeneousProfile::new(vec![
            GaussianComponent { center_hz: -30e9, fwhm_hz: 10e9, weight: 1.0 },
            GaussianComponent { center_hz: 30e9, fwhm_hz: 10e9, weight: 1.0 },
        ])
        .unwrap();
        for d in [1e9, 7e9, 29e9] {
            assert_relative_eq!(two.density(d), two.density(-d), max_relative = 1e-12);
        }
    }

    #[test]
    fn discretize_flat_profile_gives_equal_weights() {
        // a very wide Gaussian is flat over a narrow span
        let p = InhomogeneousProfile::single(1e15).unwrap();
        let classes = discretize_ensemble(&p, 1e6, 11).unwrap();
        for c in &classes {
            assert_relative_eq!(c.weight, 1.0 / 11.0, max_relative = 1e-9);
        }
    }

    #[test]
    fn discretize_weights_sum_to_one() {
        let p = InhomogeneousProfile::single(50e9).unwrap();
        let classes = discretize_ensemble(&p, 300e9, 1001).unwrap();
        let sum: f64 = classes.iter().map(|c| c.weight).sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-9);
        assert!(discretize_ensemble(&p, 0.0, 1001).is_err());
        assert!(discretize_ensemble(&p, 1e9, 2).is_err());
    }

    #[test]
    fn discretization_converges_on_smoothed_readout() {
        // a smoothed readout (kernel wider than the class spacing) must be
        // stable under doubling of the class count; n = 4001 is the reference
        let p = InhomogeneousProfile::single(50e9).unwrap();
        let smooth = |classes: &[IonClass]| -> Vec<f64> {
            let kernel = 1e9;
            (0..200)
                .map(|i| {
                    let x = -80e9 + i as f64 * 0.8e9;
                    classes
                        .iter()
                        .map(|c| c.weight * gaussian_unchecked(x, c.detuning_hz, kernel))
                        .sum()
                })
                .collect()
        };
        let a = smooth(&discretize_ensemble(&p, 300e9, 2001).unwrap());
        let b = smooth(&discretize_ensemble(&p, 300e9, 4001).unwrap());
        let peak = b.iter().cloned().fold(0.0, f64::max);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() / peak < 5e-3);
        }
    }

    #[test]
    fn ensemble_weights_shift_invariant() {
        let p = InhomogeneousProfile::single(50e9).unwrap();
        let shift = 12.5e9;
        let base = discretize_ensemble(&p, 300e9, 501).unwrap();
        let moved = discretize_window(&p.shifted(shift), -150e9 + shift, 150e9 + shift, 501).unwrap();
        for (a, b) in base.iter().zip(&moved) {
            assert_relative_eq!(a.weight, b.weight, max_relative = 1e-9);
            assert_relative_eq!(b.detuning_hz - a.detuning_hz, shift, max_relative = 1e-9);
        }
    }

    #[test]
    fn ensemble_model_validates_isotopes() {
        let p = InhomogeneousProfile::single(50e9).unwrap();
        let classes = discretize_ensemble(&p, 300e9, 101).unwrap();
        let g = HyperfineManifold::new(ManifoldLabel::Ground, [0.0, mhz(45.0), mhz(100.0)]).unwrap();
        let e = HyperfineManifold::new(ManifoldLabel::Excited, [0.0, mhz(150.0), mhz(320.0)]).unwrap();
        let iso = |a| IsotopeComponent { ground: g, excited: e, abundance: a };
        assert!(EnsembleModel::new(p.clone(), classes.clone(), vec![iso(1.0)]).is_ok());
        assert!(EnsembleModel::new(p.clone(), classes.clone(), vec![iso(0.478), iso(0.522)]).is_ok());
        assert!(EnsembleModel::new(p.clone(), classes.clone(), vec![iso(0.5), iso(0.4)]).is_err());
        assert!(EnsembleModel::new(p, classes, vec![]).is_err());
    }

    proptest! {
        #[test]
        fn branching_stochasticity_preserved(rows in proptest::array::uniform3(
            proptest::array::uniform3(0.01_f64..1.0)
        )) {
            let g = HyperfineManifold::new(ManifoldLabel::Ground, [0.0, mhz(30.0), mhz(70.0)]).unwrap();
            let e = HyperfineManifold::new(ManifoldLabel::Excited, [0.0, mhz(40.0), mhz(90.0)]).unwrap();
            let mut beta = rows;
            for row in beta.iter_mut() {
                let s: f64 = row.iter().sum();
                for v in row.iter_mut() { *v /= s; }
            }
            let t = build_transition_table(g, e, None, Some(beta)).unwrap();
            for row in t.branching() {
                let s: f64 = row.iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}
