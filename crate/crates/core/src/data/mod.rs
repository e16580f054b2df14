//! Observed-data representation for interval-censored case-cohort studies.
//!
//! Each subject's examination history is reduced to the interval `(left, right]`
//! that brackets the failure time. `right = +inf` means the subject was still
//! event-free at the last attended examination; `left = 0` means the event
//! happened before the first one.

mod csv_io;

pub use csv_io::{load_dataset, read_dataset, write_dataset};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reduces an examination history to its bracketing interval.
///
/// `exam_times` are the attended examination times `U_1 < ... < U_K` and
/// `event_flags` holds `K + 1` indicators, exactly one of which is set: flag
/// `k` (1-based, `k <= K`) means the event fell in `(U_{k-1}, U_k]` with
/// `U_0 = 0`, and flag `K + 1` means it had not occurred by `U_K`.
pub fn reduce_exam_history(exam_times: &[f64], event_flags: &[bool]) -> Result<(f64, f64)> {
    if exam_times.is_empty() {
        return Err(Error::InvalidTimes(
            "at least one attended examination is required".into(),
        ));
    }
    if event_flags.len() != exam_times.len() + 1 {
        return Err(Error::MalformedHistory(format!(
            "expected {} event flags for {} examinations, got {}",
            exam_times.len() + 1,
            exam_times.len(),
            event_flags.len()
        )));
    }
    if exam_times.iter().any(|t| !t.is_finite() || *t <= 0.0) {
        return Err(Error::InvalidTimes(
            "examination times must be finite and positive".into(),
        ));
    }
    if exam_times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidTimes(
            "examination times must be strictly increasing".into(),
        ));
    }
    let set: Vec<usize> = event_flags
        .iter()
        .enumerate()
        .filter_map(|(k, &f)| f.then_some(k))
        .collect();
    let k = match set.as_slice() {
        [k] => *k,
        [] => return Err(Error::MalformedHistory("no event flag is set".into())),
        _ => {
            return Err(Error::MalformedHistory(format!(
                "{} event flags are set, expected exactly one",
                set.len()
            )))
        }
    };
    let left = if k == 0 { 0.0 } else { exam_times[k - 1] };
    let right = exam_times.get(k).copied().unwrap_or(f64::INFINITY);
    Ok((left, right))
}

/// Phase-II sampling probabilities: subcohort `q_s` and out-of-subcohort case
/// selection `q_c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingDesign {
    q_s: f64,
    q_c: f64,
}

impl SamplingDesign {
    pub fn new(q_s: f64, q_c: f64) -> Result<Self> {
        for (name, q) in [("q_s", q_s), ("q_c", q_c)] {
            if !(q > 0.0 && q <= 1.0) {
                return Err(Error::InvalidDesign(format!("{name} = {q} is not in (0, 1]")));
            }
        }
        Ok(Self { q_s, q_c })
    }

    pub fn q_s(&self) -> f64 {
        self.q_s
    }

    pub fn q_c(&self) -> f64 {
        self.q_c
    }

    /// Inclusion probability `pi_q(delta)` of a subject into the case-cohort sample.
    pub fn inclusion_probability(&self, is_case: bool) -> f64 {
        if is_case {
            self.q_s + (1.0 - self.q_s) * self.q_c
        } else {
            self.q_s
        }
    }

    /// IPW weight `xi / pi_q(delta)`.
    pub fn weight(&self, is_case: bool, sampled: bool) -> f64 {
        if sampled {
            1.0 / self.inclusion_probability(is_case)
        } else {
            0.0
        }
    }
}

/// Convenience form of [`SamplingDesign::weight`] with 0/1 indicators.
pub fn sampling_weight(delta: u8, xi: u8, design: &SamplingDesign) -> f64 {
    design.weight(delta == 1, xi == 1)
}

/// One cohort member.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalObservation {
    id: String,
    left: f64,
    right: f64,
    z: Vec<f64>,
    xstar: Vec<f64>,
    x: Option<Vec<f64>>,
    subcohort: bool,
    selected_case: bool,
}

impl IntervalObservation {
    /// Builds an observation, checking the interval and sampling invariants.
    ///
    /// `x` must be present exactly when the subject is sampled
    /// (`subcohort || selected_case`).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: impl Into<String>,
        left: f64,
        right: f64,
        z: Vec<f64>,
        xstar: Vec<f64>,
        x: Option<Vec<f64>>,
        subcohort: bool,
        selected_case: bool,
    ) -> Result<Self> {
        let id = id.into();
        let bad = |msg: String| Error::InvalidObservation(format!("subject {id}: {msg}"));
        if !(left.is_finite() && left >= 0.0) {
            return Err(bad(format!("left endpoint {left} must be finite and >= 0")));
        }
        if right.is_nan() || right <= left {
            return Err(bad(format!("right endpoint {right} must exceed left endpoint {left}")));
        }
        if selected_case && subcohort {
            return Err(bad("a selected case cannot also be in the subcohort".into()));
        }
        if selected_case && right.is_infinite() {
            return Err(bad("a selected case must have an observed event".into()));
        }
        let sampled = subcohort || selected_case;
        if sampled != x.is_some() {
            return Err(bad(if sampled {
                "expensive covariates missing for a sampled subject".into()
            } else {
                "expensive covariates present for an unsampled subject".into()
            }));
        }
        let all_finite = z
            .iter()
            .chain(xstar.iter())
            .chain(x.iter().flatten())
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(bad("covariates must be finite".into()));
        }
        Ok(Self { id, left, right, z, xstar, x, subcohort, selected_case })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn left(&self) -> f64 {
        self.left
    }

    pub fn right(&self) -> f64 {
        self.right
    }

    /// Case indicator `delta = I(right < inf)`.
    pub fn is_case(&self) -> bool {
        self.right.is_finite()
    }

    pub fn subcohort(&self) -> bool {
        self.subcohort
    }

    pub fn selected_case(&self) -> bool {
        self.selected_case
    }

    /// `xi`: whether the expensive covariates were measured.
    pub fn sampled(&self) -> bool {
        self.subcohort || self.selected_case
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn xstar(&self) -> &[f64] {
        &self.xstar
    }

    /// Expensive covariates; `None` for unsampled subjects.
    pub fn x(&self) -> Option<&[f64]> {
        self.x.as_deref()
    }

    /// Copy of this subject with the auxiliary variables replaced.
    pub fn with_xstar(&self, xstar: Vec<f64>) -> Self {
        Self { xstar, ..self.clone() }
    }
}

/// Column labels for the three covariate blocks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CovariateNames {
    pub z: Vec<String>,
    pub xstar: Vec<String>,
    pub x: Vec<String>,
}

impl CovariateNames {
    pub fn generic(p_z: usize, p_a: usize, p_x: usize) -> Self {
        let names = |prefix: &str, p: usize| -> Vec<String> {
            (1..=p).map(|k| format!("{prefix}{k}")).collect()
        };
        Self { z: names("z", p_z), xstar: names("xstar", p_a), x: names("x", p_x) }
    }
}

/// A full cohort with its phase-II design.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortDataset {
    subjects: Vec<IntervalObservation>,
    design: SamplingDesign,
    covariate_names: CovariateNames,
}

impl CohortDataset {
    pub fn new(
        subjects: Vec<IntervalObservation>,
        design: SamplingDesign,
        covariate_names: CovariateNames,
    ) -> Result<Self> {
        let (p_z, p_a, p_x) = (
            covariate_names.z.len(),
            covariate_names.xstar.len(),
            covariate_names.x.len(),
        );
        for (row, s) in subjects.iter().enumerate() {
            let x_len = s.x.as_ref().map_or(p_x, Vec::len);
            if s.z.len() != p_z || s.xstar.len() != p_a || x_len != p_x {
                return Err(Error::Schema {
                    row,
                    message: format!(
                        "subject {} has covariate dimensions ({}, {}, {}), expected ({p_z}, {p_a}, {p_x})",
                        s.id,
                        s.z.len(),
                        s.xstar.len(),
                        x_len
                    ),
                });
            }
            if design.q_s() == 1.0 && !s.sampled() {
                return Err(Error::Schema {
                    row,
                    message: format!("q_s = 1 but subject {} is not sampled", s.id),
                });
            }
        }
        Ok(Self { subjects, design, covariate_names })
    }

    pub fn subjects(&self) -> &[IntervalObservation] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn design(&self) -> &SamplingDesign {
        &self.design
    }

    pub fn covariate_names(&self) -> &CovariateNames {
        &self.covariate_names
    }

    /// Same subjects under a different design. Fails if `q_s = 1` is requested
    /// for a cohort that has unsampled subjects.
    pub fn with_design(&self, design: SamplingDesign) -> Result<Self> {
        Self::new(self.subjects.clone(), design, self.covariate_names.clone())
    }

    /// IPW weights `w_i = xi_i / pi_q(delta_i)`.
    pub fn ipw_weights(&self) -> Vec<f64> {
        self.subjects
            .iter()
            .map(|s| self.design.weight(s.is_case(), s.sampled()))
            .collect()
    }

    pub fn unit_weights(&self) -> Vec<f64> {
        vec![1.0; self.subjects.len()]
    }

    pub fn case_count(&self) -> usize {
        self.subjects.iter().filter(|s| s.is_case()).count()
    }

    /// Smallest and largest finite positive interval endpoint, the default
    /// support `[sigma, tau]` of the sieve.
    pub fn endpoint_range(&self) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in &self.subjects {
            for t in [s.left, s.right] {
                if t.is_finite() && t > 0.0 {
                    lo = lo.min(t);
                    hi = hi.max(t);
                }
            }
        }
        (lo < hi).then_some((lo, hi))
    }

    /// Plug-in design estimated from the empirical selection fractions: the
    /// subcohort fraction over the whole cohort and the selected fraction among
    /// cases outside the subcohort.
    pub fn estimated_design(&self) -> Result<SamplingDesign> {
        let n = self.subjects.len();
        if n == 0 {
            return Err(Error::InvalidDesign("cannot estimate a design from an empty cohort".into()));
        }
        let q_s = self.subjects.iter().filter(|s| s.subcohort).count() as f64 / n as f64;
        let eligible: Vec<_> = self.subjects.iter().filter(|s| s.is_case() && !s.subcohort).collect();
        let q_c = if eligible.is_empty() {
            1.0
        } else {
            eligible.iter().filter(|s| s.selected_case).count() as f64 / eligible.len() as f64
        };
        SamplingDesign::new(q_s, q_c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduces_interior_gap() {
        let got = reduce_exam_history(&[1.0, 2.0, 3.0], &[false, true, false, false]).unwrap();
        assert_eq!(got, (1.0, 2.0));
    }

    #[test]
    fn reduces_right_censored() {
        let got = reduce_exam_history(&[1.0, 2.0, 3.0], &[false, false, false, true]).unwrap();
        assert_eq!(got, (3.0, f64::INFINITY));
    }

    #[test]
    fn reduces_left_censored() {
        let got = reduce_exam_history(&[1.0, 2.0, 3.0], &[true, false, false, false]).unwrap();
        assert_eq!(got, (0.0, 1.0));
    }

    #[test]
    fn rejects_bad_histories() {
        assert!(matches!(
            reduce_exam_history(&[1.0, 2.0], &[false, false, false]),
            Err(Error::MalformedHistory(_))
        ));
        assert!(matches!(
            reduce_exam_history(&[1.0, 2.0], &[true, true, false]),
            Err(Error::MalformedHistory(_))
        ));
        assert!(matches!(
            reduce_exam_history(&[2.0, 1.0], &[true, false, false]),
            Err(Error::InvalidTimes(_))
        ));
        assert!(matches!(
            reduce_exam_history(&[1.0, 1.0], &[true, false, false]),
            Err(Error::InvalidTimes(_))
        ));
        assert!(matches!(reduce_exam_history(&[], &[true]), Err(Error::InvalidTimes(_))));
    }

    #[test]
    fn weights_match_inclusion_probabilities() {
        let d = SamplingDesign::new(0.2, 0.5).unwrap();
        assert_eq!(sampling_weight(0, 1, &d), 5.0);
        assert!((sampling_weight(1, 1, &d) - 1.0 / 0.6).abs() < 1e-15);
        assert_eq!(sampling_weight(1, 0, &d), 0.0);
        assert_eq!(sampling_weight(0, 0, &d), 0.0);
    }

    #[test]
    fn full_subcohort_gives_unit_weights() {
        for q_c in [0.1, 0.5, 1.0] {
            let d = SamplingDesign::new(1.0, q_c).unwrap();
            assert_eq!(d.weight(true, true), 1.0);
            assert_eq!(d.weight(false, true), 1.0);
        }
    }

    #[test]
    fn weights_are_unbiased_within_strata() {
        // E[xi / pi] over the sampling distribution, enumerated per stratum.
        for &(q_s, q_c) in &[(0.2, 1.0), (0.2, 0.5), (0.1, 0.3), (1.0, 0.7)] {
            let d = SamplingDesign::new(q_s, q_c).unwrap();
            for is_case in [false, true] {
                let pi = d.inclusion_probability(is_case);
                let expectation = pi * d.weight(is_case, true) + (1.0 - pi) * d.weight(is_case, false);
                assert!((expectation - 1.0).abs() < 1e-14);
                // w * pi recovers xi up to one rounding of the reciprocal
                assert!((d.weight(is_case, true) * pi - 1.0).abs() <= f64::EPSILON);
                assert_eq!(d.weight(is_case, false) * pi, 0.0);
            }
        }
    }

    #[test]
    fn rejects_invalid_designs() {
        assert!(SamplingDesign::new(0.0, 0.5).is_err());
        assert!(SamplingDesign::new(0.2, 1.5).is_err());
        assert!(SamplingDesign::new(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn observation_invariants() {
        let ok = IntervalObservation::new("a", 1.0, 2.0, vec![], vec![], Some(vec![0.1]), false, true);
        assert!(ok.is_ok());
        // right <= left
        assert!(IntervalObservation::new("a", 2.0, 2.0, vec![], vec![], None, false, false).is_err());
        // selected case must be a case
        assert!(IntervalObservation::new("a", 2.0, f64::INFINITY, vec![], vec![], Some(vec![0.0]), false, true).is_err());
        // zeta = 1 implies eta = 0
        assert!(IntervalObservation::new("a", 1.0, 2.0, vec![], vec![], Some(vec![0.0]), true, true).is_err());
        // x present iff sampled
        assert!(IntervalObservation::new("a", 1.0, 2.0, vec![], vec![], Some(vec![0.0]), false, false).is_err());
        assert!(IntervalObservation::new("a", 1.0, 2.0, vec![], vec![], None, true, false).is_err());
    }

    #[test]
    fn estimated_design_uses_selection_fractions() {
        let mk = |id: &str, right: f64, eta: bool, zeta: bool| {
            let x = (eta || zeta).then(|| vec![0.0]);
            IntervalObservation::new(id, 1.0, right, vec![], vec![], x, eta, zeta).unwrap()
        };
        let subjects = vec![
            mk("1", 2.0, true, false),
            mk("2", f64::INFINITY, false, false),
            mk("3", 2.0, false, true),
            mk("4", 2.0, false, false),
        ];
        let data = CohortDataset::new(
            subjects,
            SamplingDesign::new(0.5, 0.5).unwrap(),
            CovariateNames::generic(0, 0, 1),
        )
        .unwrap();
        let est = data.estimated_design().unwrap();
        assert_eq!(est.q_s(), 0.25);
        assert_eq!(est.q_c(), 0.5);
    }
}
