//! Rate-preserving parameter search: pick the encoder parameter whose
//! bitrate is closest to a target.
//!
//! For rate-monotone encoders (the reference codec) a binary search is exact
//! with respect to an exhaustive scan, including the tie rule (equal rate
//! error prefers the lower parameter, i.e. higher quality). Encoders without
//! a monotonicity guarantee get a bisection bracket followed by a local ±1
//! sweep around the best probe.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pixel::PlanarImage;
use crate::refcodec::{self, QuantParam};

pub const DEFAULT_TOLERANCE: f64 = 0.05;
pub const MAX_PROBES: usize = 12;

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum RateError {
    #[error("target bpp must be positive and finite, got {0}")]
    InvalidTarget(f64),
    #[error("tolerance must be non-negative and finite, got {0}")]
    InvalidTolerance(f64),
    #[error("empty parameter range")]
    EmptyRange,
    #[error("zero-area image")]
    ZeroArea,
    #[error("encoder produced no bits")]
    ZeroBits,
    #[error("encoder failed at parameter {param}: {source}")]
    Encoder {
        param: i64,
        #[source]
        source: BoxError,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchStrategy {
    /// Bit count is non-increasing in the parameter.
    Monotone,
    /// No ordering guarantee; bracket then sweep neighbours.
    Bracketed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateStatus {
    /// Within tolerance of the target.
    Matched,
    /// Target lies outside the achievable range; the parameter sits on the
    /// range boundary.
    BestEffortAtBound,
    /// Target is inside the achievable range but no parameter lands within
    /// tolerance; the closest one is returned.
    NearestOutsideTolerance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSolveResult {
    pub param: i64,
    pub bits: u64,
    pub achieved_bpp: f64,
    pub target_bpp: f64,
    pub probes: usize,
    pub status: RateStatus,
}

impl RateSolveResult {
    pub fn qp(&self) -> QuantParam {
        QuantParam::new(self.param).expect("solved parameter outside qp range")
    }

    pub fn relative_error(&self) -> f64 {
        (self.achieved_bpp - self.target_bpp).abs() / self.target_bpp
    }
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub tolerance: f64,
    pub range: RangeInclusive<i64>,
    pub strategy: SearchStrategy,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tolerance: DEFAULT_TOLERANCE,
            range: 0..=i64::from(refcodec::MAX_QP),
            strategy: SearchStrategy::Monotone,
        }
    }
}

struct Probe<F> {
    encode: F,
    area: f64,
    cache: BTreeMap<i64, u64>,
}

impl<F, E> Probe<F>
where
    F: FnMut(i64) -> Result<u64, E>,
    E: Into<BoxError>,
{
    fn bits(&mut self, p: i64) -> Result<u64, RateError> {
        if let Some(&b) = self.cache.get(&p) {
            return Ok(b);
        }
        let b = (self.encode)(p).map_err(|e| RateError::Encoder {
            param: p,
            source: e.into(),
        })?;
        self.cache.insert(p, b);
        Ok(b)
    }

    fn bpp(&mut self, p: i64) -> Result<f64, RateError> {
        Ok(self.bits(p)? as f64 / self.area)
    }

    fn bpp_of(&self, bits: u64) -> f64 {
        bits as f64 / self.area
    }
}

/// Closest-to-target choice between two parameters; ties go to the lower one.
fn closer(a: (i64, f64), b: (i64, f64), target: f64) -> i64 {
    let (ea, eb) = ((a.1 - target).abs(), (b.1 - target).abs());
    if ea < eb || (ea == eb && a.0 < b.0) {
        a.0
    } else {
        b.0
    }
}

/// Search `opts.range` for the parameter whose bpp is closest to `target_bpp`.
///
/// `encode` maps a parameter to the exact encoded bit count; `area` is the
/// pixel count used as the bpp denominator.
pub fn solve_param<F, E>(
    area: usize,
    mut encode: F,
    target_bpp: f64,
    opts: &SolveOptions,
) -> Result<RateSolveResult, RateError>
where
    F: FnMut(i64) -> Result<u64, E>,
    E: Into<BoxError>,
{
    if !(target_bpp.is_finite() && target_bpp > 0.0) {
        return Err(RateError::InvalidTarget(target_bpp));
    }
    if !(opts.tolerance.is_finite() && opts.tolerance >= 0.0) {
        return Err(RateError::InvalidTolerance(opts.tolerance));
    }
    if area == 0 {
        return Err(RateError::ZeroArea);
    }
    if opts.range.is_empty() {
        return Err(RateError::EmptyRange);
    }
    let mut probe = Probe {
        encode: &mut encode,
        area: area as f64,
        cache: BTreeMap::new(),
    };
    let (lo_p, hi_p) = (*opts.range.start(), *opts.range.end());
    let within = |bpp: f64| (bpp - target_bpp).abs() / target_bpp <= opts.tolerance;

    let (param, out_of_range) = match opts.strategy {
        SearchStrategy::Monotone => monotone_search(&mut probe, lo_p, hi_p, target_bpp, &within)?,
        SearchStrategy::Bracketed => bracketed_search(&mut probe, lo_p, hi_p, target_bpp)?,
    };
    let bits = probe.bits(param)?;
    let achieved_bpp = probe.bpp_of(bits);
    let status = if within(achieved_bpp) {
        RateStatus::Matched
    } else if out_of_range || param == lo_p || param == hi_p {
        RateStatus::BestEffortAtBound
    } else {
        RateStatus::NearestOutsideTolerance
    };
    Ok(RateSolveResult {
        param,
        bits,
        achieved_bpp,
        target_bpp,
        probes: probe.cache.len(),
        status,
    })
}

/// Returns the chosen parameter and whether the target was outside the
/// achievable range.
fn monotone_search<F, E>(
    probe: &mut Probe<F>,
    lo_p: i64,
    hi_p: i64,
    target: f64,
    within: &dyn Fn(f64) -> bool,
) -> Result<(i64, bool), RateError>
where
    F: FnMut(i64) -> Result<u64, E>,
    E: Into<BoxError>,
{
    // Smallest parameter whose rate does not exceed the target.
    let (mut lo, mut hi) = (lo_p, hi_p + 1);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if probe.bpp(mid)? <= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let first = lo;
    if first == lo_p {
        let out = probe.bpp(lo_p)? < target;
        return Ok((lo_p, out));
    }
    if first > hi_p {
        // Even the coarsest parameter overshoots.
        if !within(probe.bpp(hi_p)?) {
            return Ok((hi_p, true));
        }
        let v = probe.bits(hi_p)?;
        return Ok((lowest_with_bits_at_most(probe, lo_p, hi_p, v)?, false));
    }
    let below = (first, probe.bpp(first)?);
    let above = (first - 1, probe.bpp(first - 1)?);
    if closer(above, below, target) == first {
        return Ok((first, false));
    }
    let v = probe.bits(first - 1)?;
    Ok((lowest_with_bits_at_most(probe, lo_p, first - 1, v)?, false))
}

/// Lowest parameter in `[lo_p, upper]` whose bit count is `<= bits`, given
/// that `upper` satisfies it. Already-probed points narrow the interval.
fn lowest_with_bits_at_most<F, E>(
    probe: &mut Probe<F>,
    lo_p: i64,
    upper: i64,
    bits: u64,
) -> Result<i64, RateError>
where
    F: FnMut(i64) -> Result<u64, E>,
    E: Into<BoxError>,
{
    let mut lo = probe
        .cache
        .range(lo_p..upper)
        .filter(|(_, &b)| b > bits)
        .map(|(&p, _)| p + 1)
        .max()
        .unwrap_or(lo_p);
    let mut hi = probe
        .cache
        .range(lo..=upper)
        .filter(|(_, &b)| b <= bits)
        .map(|(&p, _)| p)
        .min()
        .unwrap_or(upper);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if probe.bits(mid)? <= bits {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(lo)
}

fn bracketed_search<F, E>(
    probe: &mut Probe<F>,
    lo_p: i64,
    hi_p: i64,
    target: f64,
) -> Result<(i64, bool), RateError>
where
    F: FnMut(i64) -> Result<u64, E>,
    E: Into<BoxError>,
{
    let (mut lo, mut hi) = (lo_p, hi_p);
    while lo < hi && probe.cache.len() < MAX_PROBES - 2 {
        let mid = lo + (hi - lo) / 2;
        if probe.bpp(mid)? <= target {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    probe.bpp(lo)?;
    let best_probed = |probe: &Probe<F>| {
        probe
            .cache
            .iter()
            .map(|(&p, &b)| (p, probe.bpp_of(b)))
            .reduce(|a, b| {
                let w = closer(a, b, target);
                if w == a.0 {
                    a
                } else {
                    b
                }
            })
            .map(|(p, _)| p)
            .expect("at least one probe")
    };
    let mut best = best_probed(probe);
    loop {
        let before = best;
        for n in [best - 1, best + 1] {
            if (lo_p..=hi_p).contains(&n)
                && !probe.cache.contains_key(&n)
                && probe.cache.len() < MAX_PROBES
            {
                probe.bpp(n)?;
            }
        }
        best = best_probed(probe);
        if best == before || probe.cache.len() >= MAX_PROBES {
            break;
        }
    }
    let min_bpp = probe.cache.values().min().map(|&b| probe.bpp_of(b));
    let max_bpp = probe.cache.values().max().map(|&b| probe.bpp_of(b));
    let out = min_bpp.is_some_and(|m| target < m && best == hi_p)
        || max_bpp.is_some_and(|m| target > m && best == lo_p);
    Ok((best, out))
}

/// Solve the reference codec's QP for an image of either colourspace.
pub fn solve_qp(
    img: &PlanarImage,
    target_bpp: f64,
    tolerance: f64,
) -> Result<RateSolveResult, RateError> {
    let ycc = match img.colorspace() {
        crate::pixel::ColorSpace::Rgb => {
            crate::pixel::rgb_to_ycbcr420(img).map_err(|e| RateError::Encoder {
                param: -1,
                source: Box::new(e),
            })?
        }
        crate::pixel::ColorSpace::YCbCr420 => img.clone(),
    };
    let opts = SolveOptions {
        tolerance,
        ..SolveOptions::default()
    };
    solve_param(
        ycc.original_area(),
        |p| refcodec::count_bits(&ycc, QuantParam::new(p)?),
        target_bpp,
        &opts,
    )
}

/// bpp of an encoder run measured against the unpadded luma area.
pub fn measured_bpp_feedback(bits: u64, width: usize, height: usize) -> Result<f64, RateError> {
    if width == 0 || height == 0 {
        return Err(RateError::ZeroArea);
    }
    if bits == 0 {
        return Err(RateError::ZeroBits);
    }
    Ok(bits as f64 / (width * height) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    /// Exhaustive scan: closest bpp, ties to the lower parameter.
    fn scan(bits: &[u64], area: f64, target: f64) -> i64 {
        let mut best = 0usize;
        for (p, &b) in bits.iter().enumerate() {
            let e = (b as f64 / area - target).abs();
            let eb = (bits[best] as f64 / area - target).abs();
            if e < eb {
                best = p;
            }
        }
        best as i64
    }

    fn solve_table(bits: &[u64], target: f64) -> RateSolveResult {
        let opts = SolveOptions {
            range: 0..=(bits.len() as i64 - 1),
            ..SolveOptions::default()
        };
        solve_param(
            100,
            |p| Ok::<_, Infallible>(bits[p as usize]),
            target,
            &opts,
        )
        .unwrap()
    }

    #[test]
    fn exact_hit_is_matched() {
        let bits: Vec<u64> = (0..52).map(|q| 10_000 - 150 * q).collect();
        let r = solve_table(&bits, bits[30] as f64 / 100.0);
        assert_eq!(r.param, 30);
        assert_eq!(r.status, RateStatus::Matched);
        assert_eq!(r.achieved_bpp, r.target_bpp);
    }

    #[test]
    fn below_floor_is_best_effort_at_max() {
        let bits: Vec<u64> = (0..52).map(|q| 10_000 - 150 * q).collect();
        let r = solve_table(&bits, 1e-6);
        assert_eq!(r.param, 51);
        assert_eq!(r.status, RateStatus::BestEffortAtBound);
    }

    #[test]
    fn above_ceiling_is_best_effort_at_min() {
        let bits: Vec<u64> = (0..52).map(|q| 10_000 - 150 * q).collect();
        let r = solve_table(&bits, 1e6);
        assert_eq!(r.param, 0);
        assert_eq!(r.status, RateStatus::BestEffortAtBound);
    }

    #[test]
    fn plateaus_follow_the_lower_parameter_tie_rule() {
        // Flat stretches on both sides of the target.
        let mut bits = vec![0u64; 52];
        for (q, b) in bits.iter_mut().enumerate() {
            *b = match q {
                0..=9 => 9000 - 100 * q as u64,
                10..=29 => 5000,
                30..=40 => 3000,
                _ => 1000,
            };
        }
        for target in [40.0, 30.0, 31.0, 45.0, 50.0, 10.0, 20.0, 10.5, 9.9] {
            let r = solve_table(&bits, target);
            assert_eq!(r.param, scan(&bits, 100.0, target), "target {target}");
            assert!(r.probes <= MAX_PROBES);
        }
        // Far below the floor the answer pins to the boundary instead.
        let r = solve_table(&bits, 5.0);
        assert_eq!((r.param, r.status), (51, RateStatus::BestEffortAtBound));
    }

    #[test]
    fn monotone_tables_match_scan_everywhere() {
        // Deterministic pseudo-random non-increasing tables.
        let mut state = 0x9e37_79b9_7f4a_7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..300 {
            let mut bits = vec![0u64; 52];
            let mut cur = 20_000 + next() % 5000;
            for b in bits.iter_mut() {
                *b = cur;
                let drop = if next() % 3 == 0 { 0 } else { next() % 700 };
                cur = cur.saturating_sub(drop).max(200);
            }
            let lo = bits[51] as f64 / 100.0;
            let hi = bits[0] as f64 / 100.0;
            let target = lo + (hi - lo) * (next() % 10_000) as f64 / 10_000.0;
            let r = solve_table(&bits, target.max(1e-3));
            assert_eq!(r.param, scan(&bits, 100.0, target.max(1e-3)));
            assert!(r.probes <= MAX_PROBES, "{} probes", r.probes);
        }
    }

    #[test]
    fn bracketed_search_handles_small_wobbles() {
        let mut bits: Vec<u64> = (0..52).map(|q| 20_000 - 300 * q).collect();
        bits.swap(20, 21);
        bits.swap(33, 34);
        let opts = SolveOptions {
            strategy: SearchStrategy::Bracketed,
            ..SolveOptions::default()
        };
        for target in [140.0, 100.0, 60.0, 185.0, 199.0] {
            let r = solve_param(100, |p| Ok::<_, Infallible>(bits[p as usize]), target, &opts)
                .unwrap();
            assert!(r.probes <= MAX_PROBES);
            let best = scan(&bits, 100.0, target);
            let err = |p: i64| (bits[p as usize] as f64 / 100.0 - target).abs();
            assert!(err(r.param) <= err(best) + 3.0, "target {target}: {} vs {best}", r.param);
        }
    }

    #[test]
    fn encoder_errors_propagate() {
        let r = solve_param(
            10,
            |p| if p > 20 { Err("boom") } else { Ok(100) },
            0.5,
            &SolveOptions::default(),
        );
        assert!(matches!(r, Err(RateError::Encoder { .. })));
    }

    #[test]
    fn invalid_inputs() {
        let ok = |_| Ok::<u64, Infallible>(1);
        assert!(matches!(
            solve_param(10, ok, 0.0, &SolveOptions::default()),
            Err(RateError::InvalidTarget(_))
        ));
        assert!(matches!(
            solve_param(0, ok, 1.0, &SolveOptions::default()),
            Err(RateError::ZeroArea)
        ));
    }

    #[test]
    fn measured_feedback_arithmetic() {
        assert_eq!(measured_bpp_feedback(40_960, 512, 512).unwrap(), 0.15625);
        assert!(matches!(measured_bpp_feedback(0, 512, 512), Err(RateError::ZeroBits)));
        assert!(matches!(measured_bpp_feedback(10, 0, 512), Err(RateError::ZeroArea)));
    }
}
