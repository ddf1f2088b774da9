//! Bjontegaard delta metrics and paired statistics.
//!
//! BD-rate fits log10(bpp) as a function of quality for each curve and
//! compares the mean of the two fits over the quality range both curves
//! cover. Lower-is-better metrics are negated before fitting, so a negative
//! BD-rate always means the test curve needs fewer bits.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BdError {
    #[error("need >= 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("bpp must be positive and finite at point {0}")]
    InvalidRate(usize),
    #[error("quality must be finite at point {0}")]
    InvalidQuality(usize),
    #[error("bpp must be strictly increasing (point {0})")]
    RateNotIncreasing(usize),
    #[error("curves disagree on metric orientation")]
    OrientationMismatch,
    #[error("overlap interval is empty")]
    EmptyOverlap,
    #[error("degenerate fit: duplicate quality value {0}")]
    DegenerateFit(f64),
}

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need n >= {need}, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("id mismatch at row {row}: {a:?} vs {b:?}")]
    IdMismatch { row: usize, a: String, b: String },
    #[error("non-finite value at row {0}")]
    NonFinite(usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    /// Least-squares cubic polynomial (exact interpolation for 4 points).
    #[default]
    Cubic,
    /// Piecewise cubic Hermite with Fritsch-Carlson style slopes.
    Pchip,
}

impl FromStr for Interp {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cubic" | "poly" => Ok(Interp::Cubic),
            "pchip" => Ok(Interp::Pchip),
            _ => Err(format!("unknown interpolation {s:?} (cubic|pchip)")),
        }
    }
}

impl fmt::Display for Interp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Interp::Cubic => "cubic",
            Interp::Pchip => "pchip",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdCurve {
    points: Vec<(f64, f64)>,
    higher_is_better: bool,
}

impl RdCurve {
    pub fn new(points: Vec<(f64, f64)>, higher_is_better: bool) -> Result<Self, BdError> {
        if points.len() < 4 {
            return Err(BdError::TooFewPoints(points.len()));
        }
        for (i, &(r, q)) in points.iter().enumerate() {
            if !(r.is_finite() && r > 0.0) {
                return Err(BdError::InvalidRate(i));
            }
            if !q.is_finite() {
                return Err(BdError::InvalidQuality(i));
            }
            if i > 0 && r <= points[i - 1].0 {
                return Err(BdError::RateNotIncreasing(i));
            }
        }
        let curve = RdCurve {
            points,
            higher_is_better,
        };
        let bad = curve.monotonicity_violations();
        if bad > 0 {
            log::warn!("RD curve quality is not monotone in bpp ({bad} violations)");
        }
        Ok(curve)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn higher_is_better(&self) -> bool {
        self.higher_is_better
    }

    /// Oriented quality: negated for lower-is-better metrics.
    fn oriented(&self, q: f64) -> f64 {
        if self.higher_is_better {
            q
        } else {
            -q
        }
    }

    /// Count of consecutive pairs whose oriented quality fails to increase.
    pub fn monotonicity_violations(&self) -> usize {
        self.points
            .windows(2)
            .filter(|w| self.oriented(w[1].1) <= self.oriented(w[0].1))
            .count()
    }

    /// Same points with every bpp multiplied by `k`.
    pub fn scaled_rate(&self, k: f64) -> Result<Self, BdError> {
        RdCurve::new(
            self.points.iter().map(|&(r, q)| (r * k, q)).collect(),
            self.higher_is_better,
        )
    }

    /// Same curve with quality negated and orientation flipped.
    pub fn flipped(&self) -> Self {
        RdCurve {
            points: self.points.iter().map(|&(r, q)| (r, -q)).collect(),
            higher_is_better: !self.higher_is_better,
        }
    }
}

/// A fitted 1-D curve that can be integrated in closed form.
enum Fit {
    /// Cubic in `s = (x - mid) / half`; the raw Vandermonde matrix is badly
    /// conditioned for quality values in the tens.
    Poly { c: [f64; 4], mid: f64, half: f64 },
    Pchip { x: Vec<f64>, y: Vec<f64>, d: Vec<f64> },
}

impl Fit {
    fn new(interp: Interp, x: &[f64], y: &[f64]) -> Result<Fit, BdError> {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
        for w in idx.windows(2) {
            if x[w[0]] == x[w[1]] {
                return Err(BdError::DegenerateFit(x[w[0]]));
            }
        }
        match interp {
            Interp::Cubic => {
                let (lo, hi) = (x[idx[0]], x[idx[x.len() - 1]]);
                let (mid, half) = ((hi + lo) / 2.0, (hi - lo) / 2.0);
                let s: Vec<f64> = x.iter().map(|v| (v - mid) / half).collect();
                Ok(Fit::Poly { c: polyfit3(&s, y), mid, half })
            }
            Interp::Pchip => {
                let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
                let ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
                let d = pchip_slopes(&xs, &ys);
                Ok(Fit::Pchip { x: xs, y: ys, d })
            }
        }
    }

    fn integral(&self, lo: f64, hi: f64) -> f64 {
        match self {
            Fit::Poly { c, mid, half } => {
                let prim = |x: f64| {
                    let t = (x - mid) / half;
                    c[0] * t + c[1] * t * t / 2.0 + c[2] * t.powi(3) / 3.0 + c[3] * t.powi(4) / 4.0
                };
                half * (prim(hi) - prim(lo))
            }
            Fit::Pchip { x, y, d } => {
                let mut total = 0.0;
                for k in 0..x.len() - 1 {
                    let a = lo.max(x[k]);
                    let b = hi.min(x[k + 1]);
                    if b <= a {
                        continue;
                    }
                    let h = x[k + 1] - x[k];
                    let m = (y[k + 1] - y[k]) / h;
                    let c2 = (3.0 * m - 2.0 * d[k] - d[k + 1]) / h;
                    let c3 = (d[k] + d[k + 1] - 2.0 * m) / (h * h);
                    let prim = |s: f64| {
                        y[k] * s + d[k] * s * s / 2.0 + c2 * s.powi(3) / 3.0 + c3 * s.powi(4) / 4.0
                    };
                    total += prim(b - x[k]) - prim(a - x[k]);
                }
                total
            }
        }
    }
}

/// Least-squares cubic, coefficients in ascending powers.
fn polyfit3(x: &[f64], y: &[f64]) -> [f64; 4] {
    let n = x.len();
    let v = DMatrix::from_fn(n, 4, |i, j| x[i].powi(j as i32));
    let b = DVector::from_column_slice(y);
    let sol = v
        .svd(true, true)
        .solve(&b, 1e-14)
        .expect("SVD computed with both U and V");
    [sol[0], sol[1], sol[2], sol[3]]
}

/// Monotone-preserving Hermite slopes (same rules as the common PCHIP).
fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = (0..n - 1).map(|k| x[k + 1] - x[k]).collect();
    let m: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        if m[k - 1] * m[k] > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / m[k - 1] + w2 / m[k]);
        }
    }
    let end = |h0: f64, h1: f64, m0: f64, m1: f64| {
        let e = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
        if e.signum() != m0.signum() || e == 0.0 || m0 == 0.0 {
            0.0
        } else if m0.signum() != m1.signum() && e.abs() > 3.0 * m0.abs() {
            3.0 * m0
        } else {
            e
        }
    };
    if n == 2 {
        d[0] = m[0];
        d[1] = m[0];
    } else {
        d[0] = end(h[0], h[1], m[0], m[1]);
        d[n - 1] = end(h[n - 2], h[n - 3], m[n - 2], m[n - 3]);
    }
    d
}

fn overlap(a: &[f64], b: &[f64]) -> Result<(f64, f64), BdError> {
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = min(a).max(min(b));
    let hi = max(a).min(max(b));
    if hi > lo {
        Ok((lo, hi))
    } else {
        Err(BdError::EmptyOverlap)
    }
}

pub fn bd_rate(anchor: &RdCurve, test: &RdCurve) -> Result<f64, BdError> {
    bd_rate_with(anchor, test, Interp::Cubic)
}

/// BD-rate in percent; negative means the test curve saves bitrate.
pub fn bd_rate_with(anchor: &RdCurve, test: &RdCurve, interp: Interp) -> Result<f64, BdError> {
    if anchor.higher_is_better != test.higher_is_better {
        return Err(BdError::OrientationMismatch);
    }
    let split = |c: &RdCurve| -> (Vec<f64>, Vec<f64>) {
        c.points
            .iter()
            .map(|&(r, q)| (c.oriented(q), r.log10()))
            .unzip()
    };
    let (qa, ra) = split(anchor);
    let (qt, rt) = split(test);
    let (lo, hi) = overlap(&qa, &qt)?;
    let fa = Fit::new(interp, &qa, &ra)?;
    let ft = Fit::new(interp, &qt, &rt)?;
    let diff = (ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo);
    Ok((10f64.powf(diff) - 1.0) * 100.0)
}

pub fn bd_quality(anchor: &RdCurve, test: &RdCurve) -> Result<f64, BdError> {
    bd_quality_with(anchor, test, Interp::Cubic)
}

/// Mean quality gap (test − anchor) in raw metric units over the shared
/// log-rate interval. For lower-is-better metrics a negative value is an
/// improvement.
pub fn bd_quality_with(anchor: &RdCurve, test: &RdCurve, interp: Interp) -> Result<f64, BdError> {
    if anchor.higher_is_better != test.higher_is_better {
        return Err(BdError::OrientationMismatch);
    }
    let split = |c: &RdCurve| -> (Vec<f64>, Vec<f64>) {
        c.points.iter().map(|&(r, q)| (r.log10(), q)).unzip()
    };
    let (ra, qa) = split(anchor);
    let (rt, qt) = split(test);
    let (lo, hi) = overlap(&ra, &rt)?;
    let fa = Fit::new(interp, &ra, &qa)?;
    let ft = Fit::new(interp, &rt, &qt)?;
    Ok((ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo))
}

/// Per-image values of two methods, aligned by image id.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    ids: Vec<String>,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl PairedSample {
    pub fn new(ids: Vec<String>, a: Vec<f64>, b: Vec<f64>) -> Result<Self, StatsError> {
        if a.len() != b.len() {
            return Err(StatsError::LengthMismatch(a.len(), b.len()));
        }
        if ids.len() != a.len() {
            return Err(StatsError::LengthMismatch(ids.len(), a.len()));
        }
        if a.len() < 2 {
            return Err(StatsError::TooFewSamples { need: 2, got: a.len() });
        }
        for (i, (x, y)) in a.iter().zip(&b).enumerate() {
            if !(x.is_finite() && y.is_finite()) {
                return Err(StatsError::NonFinite(i));
            }
        }
        Ok(PairedSample { ids, a, b })
    }

    /// Build from two keyed columns that must list the same ids in order.
    pub fn from_keyed(a: &[(String, f64)], b: &[(String, f64)]) -> Result<Self, StatsError> {
        if a.len() != b.len() {
            return Err(StatsError::LengthMismatch(a.len(), b.len()));
        }
        for (row, (x, y)) in a.iter().zip(b).enumerate() {
            if x.0 != y.0 {
                return Err(StatsError::IdMismatch {
                    row,
                    a: x.0.clone(),
                    b: y.0.clone(),
                });
            }
        }
        PairedSample::new(
            a.iter().map(|p| p.0.clone()).collect(),
            a.iter().map(|p| p.1).collect(),
            b.iter().map(|p| p.1).collect(),
        )
    }

    /// Unlabelled pairs; ids become row indices.
    pub fn from_values(a: Vec<f64>, b: Vec<f64>) -> Result<Self, StatsError> {
        let ids = (0..a.len()).map(|i| i.to_string()).collect();
        PairedSample::new(ids, a, b)
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn swapped(&self) -> Self {
        PairedSample {
            ids: self.ids.clone(),
            a: self.b.clone(),
            b: self.a.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TTestResult {
    pub n: usize,
    pub mean_diff: f64,
    pub sd_diff: f64,
    pub t: f64,
    pub p: f64,
}

/// Two-sided paired t-test on d = A − B.
pub fn paired_t_test(sample: &PairedSample) -> TTestResult {
    let d: Vec<f64> = sample.a.iter().zip(&sample.b).map(|(x, y)| x - y).collect();
    let s = Summary::of(&d).expect("PairedSample has n >= 2");
    let n = d.len();
    let (t, p) = if d.iter().all(|&v| v == 0.0) {
        (0.0, 1.0)
    } else if s.sd == 0.0 {
        (f64::INFINITY.copysign(s.mean), 0.0)
    } else {
        let t = s.mean / (s.sd / (n as f64).sqrt());
        (t, student_t_two_sided(t, (n - 1) as f64))
    };
    TTestResult {
        n,
        mean_diff: s.mean,
        sd_diff: s.sd,
        t,
        p,
    }
}

/// Two-sided tail probability of Student's t: I_{ν/(ν+t²)}(ν/2, 1/2).
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    statrs::function::beta::beta_reg(df / 2.0, 0.5, x)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 when n = 1 (see `single`).
    pub sd: f64,
    pub single: bool,
}

impl Summary {
    /// Two-pass mean and sample sd.
    pub fn of(values: &[f64]) -> Result<Summary, StatsError> {
        let n = values.len();
        if n == 0 {
            return Err(StatsError::TooFewSamples { need: 1, got: 0 });
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n == 1 {
            0.0
        } else {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (n - 1) as f64).sqrt()
        };
        Ok(Summary {
            n,
            mean,
            sd,
            single: n == 1,
        })
    }

    /// `mean ± sd` at `digits` decimals, with an n=1 marker.
    pub fn format(&self, digits: usize) -> String {
        let mut s = format!("{:.*} ± {:.*}", digits, self.mean, digits, self.sd);
        if self.single {
            s.push_str(" (n=1)");
        }
        s
    }
}

pub fn summarize(values: &[f64]) -> Result<Summary, StatsError> {
    Summary::of(values)
}
