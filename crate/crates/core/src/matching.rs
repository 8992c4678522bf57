//! Pattern matching between energy vectors of consecutive registrations.
//!
//! Translation vectors of two registrations over the same depth layout
//! differ by a stretch of the radius axis (the ratio of the two motion
//! lengths); zoom vectors differ by a shift of the log-scale axis. Both
//! factors are found by scanning a bounded candidate set, scoring each by
//! the overlap-normalized squared difference, and picking the sharpest
//! valley of the resulting error curve.

use serde::{Deserialize, Serialize};

use crate::energy::EnergyVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorMode {
    Translation,
    Scale,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// Largest accepted ratio between consecutive motions.
    pub bound: f64,
    /// Ratio between neighbouring translation candidates.
    pub translation_step: f64,
    /// Candidates whose overlap is shorter than this fraction of the vector
    /// are discarded.
    pub min_overlap: f64,
    /// Gaussian smoothing applied to energy vectors before matching, bins.
    pub smoothing_sigma: f64,
}

/// `3^(1/60)`: 121 candidates over `[1/3, 3]`.
pub const DEFAULT_TRANSLATION_STEP: f64 = 1.018_478_864_436_052_3;

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            bound: 3.0,
            translation_step: DEFAULT_TRANSLATION_STEP,
            min_overlap: 0.25,
            smoothing_sigma: crate::energy::DEFAULT_SMOOTHING_SIGMA,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Multiplicative length ratio (translation) or signed bin shift (scale).
    pub lambda: f64,
    pub sigma_lambda: f64,
    pub index: usize,
    pub error_curve: Vec<f64>,
    pub candidates: Vec<f64>,
}

impl MatchResult {
    /// `candidate,error,selected` rows; infinite errors (no overlap) are written as `inf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("candidate,error,selected\n");
        for (i, (c, e)) in self.candidates.iter().zip(&self.error_curve).enumerate() {
            out.push_str(&format!("{c},{e},{}\n", (i == self.index) as u8));
        }
        out
    }
}

/// Translation length and zoom of the latest registration, relative to the
/// unit first pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionState {
    pub rho: f64,
    pub s: f64,
}

impl MotionState {
    pub const UNIT: MotionState = MotionState { rho: 1.0, s: 1.0 };

    /// `rho' = lambda_t * rho`, `s' = s / epsilon^lambda_s`.
    pub fn advance(&self, lambda_t: f64, lambda_s: f64, epsilon: f64) -> MotionState {
        MotionState {
            rho: lambda_t * self.rho,
            s: self.s / epsilon.powf(lambda_s),
        }
    }
}

impl Default for MotionState {
    fn default() -> Self {
        Self::UNIT
    }
}

pub fn update_motion(
    prev: &MotionState,
    lt: &MatchResult,
    ls: &MatchResult,
    epsilon: f64,
) -> MotionState {
    prev.advance(lt.lambda, ls.lambda, epsilon)
}

/// Candidate factors for a bound `> 1`.
///
/// Translation: log-spaced ratios `step^k` covering `[1/bound, bound]`.
/// Scale: integer bin shifts `±round(ln bound / ln epsilon)`.
pub fn candidate_factors(mode: FactorMode, bound: f64, step: f64) -> Result<Vec<f64>> {
    if !(bound > 1.0) || !(step > 1.0) {
        return Err(Error::Contract(format!(
            "candidate bound {bound} and step {step} must exceed 1"
        )));
    }
    let half = (bound.ln() / step.ln()).round() as i64;
    Ok(match mode {
        FactorMode::Translation => (-half..=half).map(|k| step.powf(k as f64)).collect(),
        FactorMode::Scale => (-half..=half).map(|k| k as f64).collect(),
    })
}

fn check_pair(prev: &EnergyVector, next: &EnergyVector) -> Result<()> {
    if prev.len() != next.len() {
        return Err(Error::Contract(format!(
            "energy vectors differ in length: {} vs {}",
            prev.len(),
            next.len()
        )));
    }
    Ok(())
}

/// Linear interpolation inside `[0, n-1]`.
fn lerp_at(v: &[f64], x: f64) -> f64 {
    let i = x.floor() as usize;
    if i + 1 >= v.len() {
        return v[v.len() - 1];
    }
    let f = x - i as f64;
    v[i] * (1.0 - f) + v[i + 1] * f
}

/// Overlap-normalized error of `prev` stretched by `lambda` against `next`.
fn stretch_error(prev: &[f64], next: &[f64], lambda: f64, min_overlap: usize) -> f64 {
    let n = prev.len();
    let last = (n - 1) as f64;
    let mut acc = 0.0;
    let mut count = 0usize;
    for (j, nv) in next.iter().enumerate() {
        let src = j as f64 / lambda;
        if src > last + 1e-9 {
            break;
        }
        let d = lerp_at(prev, src.min(last)) - nv;
        acc += d * d;
        count += 1;
    }
    if count < min_overlap.max(1) {
        f64::INFINITY
    } else {
        acc / count as f64
    }
}

fn shift_error(prev: &[f64], next: &[f64], shift: i64, min_overlap: usize) -> f64 {
    let n = prev.len() as i64;
    let lo = shift.max(0);
    let hi = (n + shift).min(n);
    let count = (hi - lo).max(0) as usize;
    if count < min_overlap.max(1) {
        return f64::INFINITY;
    }
    let acc: f64 = (lo..hi)
        .map(|j| {
            let d = prev[(j - shift) as usize] - next[j as usize];
            d * d
        })
        .sum();
    acc / count as f64
}

fn min_overlap_bins(n: usize, frac: f64) -> usize {
    (frac * n as f64).ceil() as usize
}

/// Ratio `lambda` such that `next(r) ≈ prev(r / lambda)`.
pub fn match_translation(
    prev: &EnergyVector,
    next: &EnergyVector,
    cfg: &MatchConfig,
) -> Result<MatchResult> {
    check_pair(prev, next)?;
    let candidates = candidate_factors(FactorMode::Translation, cfg.bound, cfg.translation_step)?;
    let p = prev.l2_normalized();
    let q = next.l2_normalized();
    let min_overlap = min_overlap_bins(p.len(), cfg.min_overlap);
    let errors: Vec<f64> = candidates
        .iter()
        .map(|&l| stretch_error(p.values(), q.values(), l, min_overlap))
        .collect();
    finish(errors, candidates)
}

/// Bin shift `lambda` such that `next[j] ≈ prev[j - lambda]`.
pub fn match_scale(
    prev: &EnergyVector,
    next: &EnergyVector,
    cfg: &MatchConfig,
    epsilon: f64,
) -> Result<MatchResult> {
    check_pair(prev, next)?;
    let candidates = candidate_factors(FactorMode::Scale, cfg.bound, epsilon)?;
    let p = prev.l2_normalized();
    let q = next.l2_normalized();
    let min_overlap = min_overlap_bins(p.len(), cfg.min_overlap);
    let errors: Vec<f64> = candidates
        .iter()
        .map(|&s| shift_error(p.values(), q.values(), s as i64, min_overlap))
        .collect();
    finish(errors, candidates)
}

fn finish(errors: Vec<f64>, candidates: Vec<f64>) -> Result<MatchResult> {
    if candidates.len() == 1 {
        // degenerate bound: the only candidate is the identity
        if !errors[0].is_finite() {
            return Err(Error::Matching("no overlapping candidate".into()));
        }
        return Ok(MatchResult {
            lambda: candidates[0],
            sigma_lambda: 0.0,
            index: 0,
            error_curve: errors,
            candidates,
        });
    }
    if errors.iter().all(|e| !e.is_finite()) {
        return Err(Error::Matching("no candidate has enough overlap".into()));
    }
    let (index, sigma_lambda) = select_factor(&errors, &candidates)?;
    Ok(MatchResult {
        lambda: candidates[index],
        sigma_lambda,
        index,
        error_curve: errors,
        candidates,
    })
}

/// Floor on the curvature used for the factor uncertainty.
const CURVATURE_FLOOR: f64 = 1e-12;

/// Second difference at `i`, mirroring a missing neighbour onto the present one.
fn laplacian(e: &[f64], i: usize) -> Option<f64> {
    let left = i.checked_sub(1).map(|k| e[k]).filter(|v| v.is_finite());
    let right = e.get(i + 1).copied().filter(|v| v.is_finite());
    match (left, right) {
        (Some(l), Some(r)) => Some(l - 2.0 * e[i] + r),
        (Some(o), None) | (None, Some(o)) => Some(2.0 * (o - e[i])),
        (None, None) => None,
    }
}

/// Picks the local minimum of `errors` whose valley is sharpest relative to
/// its depth, `L_i / (e_i + floor)` with `L_i` the discrete Laplacian, and
/// derives an uncertainty from the curvature. Minima above the median error
/// are ignored.
pub fn select_factor(errors: &[f64], candidates: &[f64]) -> Result<(usize, f64)> {
    if errors.len() != candidates.len() {
        return Err(Error::Contract("error curve and candidates differ in length".into()));
    }
    let finite = errors.iter().filter(|e| e.is_finite()).count();
    if finite < 5 {
        return Err(Error::Matching(format!(
            "need at least 5 finite errors, got {finite}"
        )));
    }
    if errors.iter().any(|e| *e < 0.0) {
        return Err(Error::InputDomain("negative matching error".into()));
    }
    let mut sorted: Vec<f64> = errors.iter().copied().filter(|e| e.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[(sorted.len() - 1) / 2];
    let depth_floor = (0.01 * median).max(f64::MIN_POSITIVE);
    let n = errors.len();
    let mut best: Option<(usize, f64, f64)> = None;
    for i in 1..n - 1 {
        let e = errors[i];
        if !e.is_finite() {
            continue;
        }
        let (l, r) = (errors[i - 1], errors[i + 1]);
        let is_min = e <= l && e <= r && (e < l || e < r);
        if !is_min || e > median {
            continue;
        }
        let Some(lap) = laplacian(errors, i) else {
            continue;
        };
        let score = lap / (e + depth_floor);
        if best.is_none_or(|(_, _, b)| score > b) {
            best = Some((i, lap, score));
        }
    }
    let best = best.map(|(i, lap, _)| (i, lap));
    let (index, lap) = best.ok_or_else(|| Error::Matching("error curve has no local minimum".into()))?;
    let step = 0.5 * (candidates[index + 1] - candidates[index - 1]).abs();
    let sigma = step * (2.0 * errors[index] / lap.max(CURVATURE_FLOOR)).sqrt();
    Ok((index, sigma.clamp(step, 10.0 * step)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{smooth_vector, Axis};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const RADIUS: Axis = Axis::Radius { pixels_per_bin: 1.0 };

    fn peaks(n: usize, at: &[(f64, f64)], width: f64) -> Vec<f64> {
        (0..n)
            .map(|j| {
                at.iter()
                    .map(|&(c, a)| a * (-0.5 * ((j as f64 - c) / width).powi(2)).exp())
                    .sum()
            })
            .collect()
    }

    fn ev(v: Vec<f64>) -> EnergyVector {
        smooth_vector(&EnergyVector::new(v, RADIUS).unwrap(), 1.0)
    }

    #[test]
    fn translation_candidates_are_log_symmetric() {
        let c = candidate_factors(FactorMode::Translation, 3.0, DEFAULT_TRANSLATION_STEP).unwrap();
        assert_eq!(c.len(), 121);
        for i in 0..c.len() {
            assert!((c[i] * c[c.len() - 1 - i] - 1.0).abs() < 1e-9);
        }
        assert!((c[0] - 1.0 / 3.0).abs() < 1e-9 && (c[120] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_bound_gives_identity_only() {
        let c = candidate_factors(FactorMode::Translation, 1.0001, DEFAULT_TRANSLATION_STEP).unwrap();
        assert_eq!(c.len(), 1);
        assert!((c[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scale_candidate_count() {
        let c = candidate_factors(FactorMode::Scale, 3.0, 1.02).unwrap();
        let m = (3f64.ln() / 1.02f64.ln()).round() as usize;
        assert_eq!(c.len(), 2 * m + 1);
        assert_eq!(c.len(), 111);
    }

    #[test]
    fn identical_translation_vectors_match_at_one() {
        let v = ev(peaks(128, &[(12.0, 1.0), (30.0, 0.6)], 1.5));
        let m = match_translation(&v, &v, &MatchConfig::default()).unwrap();
        assert!((m.lambda - 1.0).abs() <= DEFAULT_TRANSLATION_STEP - 1.0 + 1e-12);
    }

    #[test]
    fn three_depths_doubled() {
        let a = ev(peaks(128, &[(10.0, 1.0), (25.0, 0.7), (40.0, 0.5)], 1.2));
        let b = ev(peaks(128, &[(20.0, 1.0), (50.0, 0.7), (80.0, 0.5)], 2.4));
        let m = match_translation(&a, &b, &MatchConfig::default()).unwrap();
        assert!((m.lambda / 2.0 - 1.0).abs() < 0.05, "lambda {}", m.lambda);
    }

    /// Resamples the radius axis so that `out(r) = v(r / lambda)`.
    fn resample(v: &[f64], lambda: f64) -> Vec<f64> {
        (0..v.len())
            .map(|j| {
                let x = j as f64 / lambda;
                if x >= (v.len() - 1) as f64 {
                    0.0
                } else {
                    lerp_at(v, x)
                }
            })
            .collect()
    }

    #[test]
    fn noisy_half_resample() {
        let base = peaks(128, &[(30.0, 1.0), (52.0, 0.8), (76.0, 0.6)], 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let next: Vec<f64> = resample(&base, 0.5)
            .into_iter()
            .map(|v| (v + noise.sample(&mut rng)).max(0.0))
            .collect();
        let m = match_translation(&ev(base), &ev(next), &MatchConfig::default()).unwrap();
        assert!((0.475..=0.525).contains(&m.lambda), "lambda {}", m.lambda);
    }

    #[test]
    fn scale_identity_and_shift() {
        let eps = 1.02;
        let axis = Axis::LogScale { epsilon: eps };
        let base = peaks(128, &[(50.0, 1.0), (64.0, 0.5), (70.0, 0.8)], 2.0);
        let v = EnergyVector::new(base.clone(), axis).unwrap();
        let m = match_scale(&v, &v, &MatchConfig::default(), eps).unwrap();
        assert_eq!(m.lambda, 0.0);

        let shifted: Vec<f64> = (0..128).map(|j| if j >= 4 { base[j - 4] } else { 0.0 }).collect();
        let w = EnergyVector::new(shifted.clone(), axis).unwrap();
        let m = match_scale(&v, &w, &MatchConfig::default(), eps).unwrap();
        assert_eq!(m.lambda, 4.0);

        // constructed oracle: shift by 4, 2% noise, last 10% missing
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.02).unwrap();
        let damaged: Vec<f64> = shifted
            .iter()
            .enumerate()
            .map(|(j, &x)| if j >= 115 { 0.0 } else { (x + noise.sample(&mut rng)).max(0.0) })
            .collect();
        let w = EnergyVector::new(damaged, axis).unwrap();
        let m = match_scale(
            &smooth_vector(&v, 1.0),
            &smooth_vector(&w, 1.0),
            &MatchConfig::default(),
            eps,
        )
        .unwrap();
        assert_eq!(m.lambda, 4.0);
    }

    #[test]
    fn no_overlap_is_an_error() {
        let v = ev(peaks(16, &[(5.0, 1.0)], 1.0));
        let cfg = MatchConfig {
            min_overlap: 1.5,
            ..MatchConfig::default()
        };
        assert!(matches!(match_translation(&v, &v, &cfg), Err(Error::Matching(_))));
    }

    #[test]
    fn single_parabolic_valley() {
        let c: Vec<f64> = (0..41).map(|i| i as f64).collect();
        let e: Vec<f64> = c.iter().map(|x| 0.01 * (x - 23.0).powi(2) + 0.04).collect();
        let (i, s) = select_factor(&e, &c).unwrap();
        assert_eq!(i, 23);
        // sigma = sqrt(2 * 0.04 / 0.02) = 2 steps
        assert!((s - 2.0).abs() < 1e-9);
        let wide: Vec<f64> = c.iter().map(|x| 0.0025 * (x - 23.0).powi(2) + 0.04).collect();
        let (_, s_wide) = select_factor(&wide, &c).unwrap();
        assert!(s_wide > s);
    }

    #[test]
    fn sharp_valley_beats_flat_one() {
        let c: Vec<f64> = (0..60).map(|i| i as f64).collect();
        let e: Vec<f64> = c
            .iter()
            .map(|&x| {
                let flat = 0.002 * (x - 15.0).powi(2);
                let sharp = 0.5 * (x - 45.0).powi(2);
                0.1 + flat.min(sharp).min(1.0)
            })
            .collect();
        let (i, _) = select_factor(&e, &c).unwrap();
        assert_eq!(i, 45);
    }

    #[test]
    fn planted_sharp_valley_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let c: Vec<f64> = (0..121).map(|i| i as f64).collect();
        let mut hits = 0;
        for _ in 0..100 {
            let planted = rng.random_range(5..116);
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let e: Vec<f64> = c
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let smooth = 0.5 + 0.2 * (x * 0.15 + phase).sin();
                    let jitter = rng.random_range(0.0..0.01);
                    let d = (i as f64 - planted as f64).abs();
                    let dip = if d <= 2.0 { 0.3 * (1.0 - d / 3.0) } else { 0.0 };
                    smooth + jitter - dip
                })
                .collect();
            if select_factor(&e, &c).unwrap().0 == planted {
                hits += 1;
            }
        }
        assert!(hits >= 95, "hits {hits}");
    }

    #[test]
    fn monotone_curve_has_no_minimum() {
        let c: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let e: Vec<f64> = c.iter().map(|x| x * 0.1).collect();
        assert!(matches!(select_factor(&e, &c), Err(Error::Matching(_))));
    }

    #[test]
    fn motion_update() {
        let s = MotionState::UNIT;
        assert_eq!(s.advance(1.0, 0.0, 1.02), s);
        assert_eq!(s.advance(2.0, 0.0, 1.02).rho, 2.0);
        let z = s.advance(1.0, -4.0, 1.02).s;
        assert!((z - 1.02f64.powi(4)).abs() < 1e-12);
        assert!((z - 1.0824).abs() < 1e-4);
        let a = s.advance(1.7, 0.0, 1.02).advance(0.6, 0.0, 1.02);
        assert_eq!(a.rho, 1.7 * 0.6);
    }

    #[test]
    fn inversion_consistency() {
        let a = ev(peaks(128, &[(12.0, 1.0), (20.0, 0.7), (31.0, 0.5)], 1.2));
        let b = ev(resample(&peaks(128, &[(12.0, 1.0), (20.0, 0.7), (31.0, 0.5)], 1.2), 1.6));
        let cfg = MatchConfig::default();
        let ab = match_translation(&a, &b, &cfg).unwrap().lambda;
        let ba = match_translation(&b, &a, &cfg).unwrap().lambda;
        let steps = (ab * ba).ln().abs() / DEFAULT_TRANSLATION_STEP.ln();
        assert!(steps <= 2.0 + 1e-9, "{ab} * {ba}");
    }

    #[test]
    fn error_curve_ignores_common_scaling() {
        let a = ev(peaks(64, &[(10.0, 1.0), (22.0, 0.4)], 1.0));
        let b = ev(peaks(64, &[(13.0, 1.0), (28.0, 0.4)], 1.0));
        let cfg = MatchConfig::default();
        let m1 = match_translation(&a, &b, &cfg).unwrap();
        let scaled = |v: &EnergyVector| v.with_values(v.values().iter().map(|x| x * 7.5).collect());
        let m2 = match_translation(&scaled(&a), &scaled(&b), &cfg).unwrap();
        for (x, y) in m1.error_curve.iter().zip(&m2.error_curve) {
            assert!((x - y).abs() < 1e-12 || (x.is_infinite() && y.is_infinite()));
        }
    }

    #[test]
    fn true_factor_has_lowest_error_beyond_two_steps() {
        let base = peaks(128, &[(14.0, 1.0), (23.0, 0.6), (37.0, 0.8)], 1.3);
        let cfg = MatchConfig::default();
        for k in [-20i32, -7, 9, 25] {
            let lambda = DEFAULT_TRANSLATION_STEP.powi(k);
            let a = ev(base.clone());
            let b = ev(resample(&base, lambda));
            let m = match_translation(&a, &b, &cfg).unwrap();
            let true_idx = (60 + k) as usize;
            let e_true = m.error_curve[true_idx];
            for (i, e) in m.error_curve.iter().enumerate() {
                if (i as i64 - true_idx as i64).abs() > 2 {
                    assert!(e_true <= *e, "k={k}: idx {i} beats truth");
                }
            }
        }
    }

    #[test]
    fn curve_csv_rows() {
        let v = ev(peaks(128, &[(12.0, 1.0), (30.0, 0.6)], 1.5));
        let r = match_translation(&v, &v, &MatchConfig::default()).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), r.candidates.len() + 1);
        let selected: Vec<_> = csv.lines().skip(1).filter(|l| l.ends_with(",1")).collect();
        assert_eq!(selected.len(), 1);
        let c: f64 = selected[0].split(',').next().unwrap().parse().unwrap();
        assert_eq!(c, r.lambda);
    }
}
