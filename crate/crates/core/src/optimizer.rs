//! Per-image preprocessing by gradient descent through the proxy.
//!
//! The loop alternates two stages. Every `re_solve_qp_every` iterations the
//! QP for the current iterate is re-resolved on the hard codec; between
//! re-solves the QP is frozen and pixels descend on the MSE between the
//! composed forward value and the supervision image. A step that raises the
//! loss is undone and the step size halved, so within a QP segment the
//! accepted loss never increases.
//!
//! Descent alone cannot be trusted to help the hard codec: the proxy rewards
//! moving coefficients toward rounding boundaries, which the hard quantizer
//! ignores or punishes. So the input and the accepted iterate at every
//! re-solve point (and at the end) are scored with the hard codec at their
//! own rate-matched QP against the clean image, and the best one is returned;
//! ties keep the earlier candidate, so the input wins unless beaten.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition::{CodecCondition, CodecId};
use crate::metrics::{self, MetricError};
use crate::pixel::{PixelError, PlanarImage, Plane};
use crate::proxy::{compose_at, proxy_gradient, slightly_compressed_target, Composition, ProxyError};
use crate::ratecontrol::{solve_qp, RateError, RateStatus, DEFAULT_TOLERANCE};
use crate::refcodec::{self, CodecError, QuantParam};

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("input and clean images differ in layout")]
    LayoutMismatch,
    #[error("loss became non-finite at iteration {iteration}")]
    Divergent {
        iteration: usize,
        losses: Vec<f64>,
        qps: Vec<u8>,
    },
    #[error("grid needs >= 2 configs, got {0}")]
    GridTooSmall(usize),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Proxy(#[from] ProxyError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Pixel(#[from] PixelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Supervision {
    Clean,
    /// Regress toward the clean image compressed 10 QP finer.
    #[serde(rename = "slight")]
    SlightlyCompressed,
}

impl FromStr for Supervision {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "clean" => Ok(Supervision::Clean),
            "slight" | "slightly-compressed" | "slightlycompressed" => {
                Ok(Supervision::SlightlyCompressed)
            }
            _ => Err(format!("unknown supervision {s:?} (expected clean|slight)")),
        }
    }
}

impl fmt::Display for Supervision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Supervision::Clean => "clean",
            Supervision::SlightlyCompressed => "slight",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    pub steps: usize,
    pub step_size: f64,
    pub mode: Composition,
    pub supervision: Supervision,
    pub re_solve_qp_every: usize,
    pub target: CodecCondition,
}

impl OptimizeConfig {
    pub fn new(target: CodecCondition) -> Self {
        OptimizeConfig {
            steps: 200,
            step_size: 0.05,
            mode: Composition::NoSte,
            supervision: Supervision::SlightlyCompressed,
            re_solve_qp_every: 10,
            target,
        }
    }

    pub fn validate(&self) -> Result<(), OptimizeError> {
        let bad = |m: &str| Err(OptimizeError::InvalidConfig(m.to_string()));
        if self.steps == 0 {
            return bad("steps must be >= 1");
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return bad("step_size must be positive");
        }
        if self.re_solve_qp_every == 0 {
            return bad("re_solve_qp_every must be >= 1");
        }
        if self.target.codec != CodecId::RefCodec {
            return bad("the optimizer descends through the reference-codec proxy only");
        }
        Ok(())
    }

    /// Short label used in ablation tables, e.g. `noste+slight`.
    pub fn label(&self) -> String {
        format!("{}+{}", self.mode, self.supervision)
    }
}

/// Hard-codec score of a preprocessed image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardEvaluation {
    pub qp: u8,
    pub bits: u64,
    pub bpp: f64,
    pub target_bpp: Option<f64>,
    pub rate_status: Option<RateStatus>,
    /// PSNR of the decoded image against the clean image.
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug)]
pub struct OptimizeTrace {
    /// Loss of the iterate evaluated at each iteration (length = steps).
    pub losses: Vec<f64>,
    /// Loss of the accepted iterate after each iteration.
    pub best_losses: Vec<f64>,
    /// QP in force at each iteration.
    pub qps: Vec<u8>,
    /// Step size in force at each iteration.
    pub step_sizes: Vec<f64>,
    /// Iterations at which a re-solve changed the QP.
    pub qp_changes: Vec<usize>,
    pub final_image: PlanarImage,
    /// Proxy and hard-codec losses of the final iterate at the final QP.
    pub final_proxy_loss: f64,
    pub final_hard_loss: f64,
    pub evaluation: HardEvaluation,
}

impl OptimizeTrace {
    /// CSV with one row per iteration.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,loss,best_loss,qp,step_size\n");
        for i in 0..self.losses.len() {
            let _ = writeln!(
                s,
                "{},{:.12e},{:.12e},{},{}",
                i, self.losses[i], self.best_losses[i], self.qps[i], self.step_sizes[i]
            );
        }
        s
    }

    /// `best_losses` split at QP changes; each segment is non-increasing.
    pub fn segments(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        let mut start = 0;
        for &c in &self.qp_changes {
            out.push(&self.best_losses[start..c]);
            start = c;
        }
        out.push(&self.best_losses[start..]);
        out
    }

    pub fn summary(&self, baseline: Option<&HardEvaluation>) -> TraceSummary {
        TraceSummary {
            steps: self.losses.len(),
            initial_loss: self.losses.first().copied().unwrap_or(f64::NAN),
            final_proxy_loss: self.final_proxy_loss,
            final_hard_loss: self.final_hard_loss,
            evaluation: self.evaluation.clone(),
            baseline: baseline.cloned(),
            psnr_delta: baseline.map(|b| self.evaluation.psnr - b.psnr),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub steps: usize,
    pub initial_loss: f64,
    pub final_proxy_loss: f64,
    pub final_hard_loss: f64,
    pub evaluation: HardEvaluation,
    pub baseline: Option<HardEvaluation>,
    pub psnr_delta: Option<f64>,
}

/// Cropped MSE and its upstream gradient `f − t` (zero on padding).
fn loss_and_residual(f: &PlanarImage, t: &PlanarImage) -> Result<(f64, PlanarImage), PixelError> {
    let (ow, oh) = f.original_size();
    let mut sum = 0.0;
    let mut planes = Vec::with_capacity(f.planes().len());
    for (pf, pt) in f.planes().iter().zip(t.planes()) {
        let (w, h) = (pf.width(), pf.height());
        let mut r = Plane::filled(w, h, 0.0);
        for y in 0..oh.min(h) {
            for x in 0..ow.min(w) {
                let d = pf.get(x, y) - pt.get(x, y);
                sum += d * d;
                r.set(x, y, d);
            }
        }
        planes.push(r);
    }
    let n = (ow * oh * f.planes().len()) as f64;
    Ok((sum / n, f.with_planes(planes)?))
}

fn supervision_image(
    clean: &PlanarImage,
    qp: QuantParam,
    sup: Supervision,
) -> Result<PlanarImage, ProxyError> {
    match sup {
        Supervision::Clean => Ok(clean.clone()),
        Supervision::SlightlyCompressed => slightly_compressed_target(clean, qp),
    }
}

fn resolve(img: &PlanarImage, cond: &CodecCondition) -> Result<(QuantParam, Option<RateStatus>), OptimizeError> {
    Ok(match cond.mode {
        crate::condition::RateMode::TargetBpp(b) => {
            let r = solve_qp(img, b, DEFAULT_TOLERANCE)?;
            (r.qp(), Some(r.status))
        }
        _ => (crate::proxy::resolve_qp(img, cond)?.0, None),
    })
}

/// Score `pre` with the hard codec at the QP the rate target resolves to.
pub fn hard_evaluate(
    clean: &PlanarImage,
    pre: &PlanarImage,
    target: &CodecCondition,
) -> Result<HardEvaluation, OptimizeError> {
    let (qp, rate_status) = resolve(pre, target)?;
    let (decoded, bits) = refcodec::round_trip(pre, qp)?;
    Ok(HardEvaluation {
        qp: qp.value(),
        bits,
        bpp: bits as f64 / pre.original_area() as f64,
        target_bpp: target.bpp(),
        rate_status,
        psnr: metrics::psnr(clean, &decoded)?,
        ssim: metrics::ssim(clean, &decoded)?,
    })
}

/// Identity preprocessing: the `steps = 0` baseline.
pub fn baseline(clean: &PlanarImage, input: &PlanarImage, target: &CodecCondition) -> Result<HardEvaluation, OptimizeError> {
    if !clean.same_layout(input) {
        return Err(OptimizeError::LayoutMismatch);
    }
    hard_evaluate(clean, input, target)
}

pub fn optimize_preprocess(
    clean: &PlanarImage,
    input: &PlanarImage,
    cfg: &OptimizeConfig,
) -> Result<OptimizeTrace, OptimizeError> {
    cfg.validate()?;
    if !clean.same_layout(input) {
        return Err(OptimizeError::LayoutMismatch);
    }
    let n = cfg.steps;
    let mut losses = Vec::with_capacity(n);
    let mut best_losses = Vec::with_capacity(n);
    let mut qps = Vec::with_capacity(n);
    let mut step_sizes = Vec::with_capacity(n);
    let mut qp_changes = Vec::new();

    let (mut qp, _) = resolve(input, &cfg.target)?;
    let mut target = supervision_image(clean, qp, cfg.supervision)?;
    let mut step = cfg.step_size;
    // accepted iterate, its loss and its gradient
    let mut best = input.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_grad: Option<PlanarImage> = None;
    // iterate with the best rate-matched hard-codec fidelity seen so far
    let mut keep = input.clone();
    let mut keep_err = matched_error(clean, input, &cfg.target)?;
    let mut x = input.clone();

    for it in 0..n {
        if it > 0 && it % cfg.re_solve_qp_every == 0 {
            let e = matched_error(clean, &best, &cfg.target)?;
            if e < keep_err {
                keep_err = e;
                keep = best.clone();
            }
            let (q, _) = resolve(&best, &cfg.target)?;
            if q != qp {
                log::debug!("iteration {it}: qp {} -> {}", qp.value(), q.value());
                qp = q;
                target = supervision_image(clean, qp, cfg.supervision)?;
                qp_changes.push(it);
                // new segment: the accepted iterate is re-scored below
                x = best.clone();
                best_loss = f64::INFINITY;
            }
        }
        let c = compose_at(cfg.mode, &x, qp)?;
        let (loss, residual) = loss_and_residual(&c.forward_image, &target)?;
        losses.push(loss);
        qps.push(qp.value());
        step_sizes.push(step);
        if !loss.is_finite() {
            return Err(OptimizeError::Divergent {
                iteration: it,
                losses,
                qps,
            });
        }
        if loss <= best_loss {
            best_loss = loss;
            best = x;
            best_grad = Some(proxy_gradient(&c.tape, &residual)?);
        } else {
            step *= 0.5;
        }
        best_losses.push(best_loss);
        let g = best_grad.as_ref().expect("first iterate is always accepted");
        x = descend(&best, g, step)?;
    }

    // the last step has not been scored yet
    let c = compose_at(cfg.mode, &x, qp)?;
    let (cand_loss, _) = loss_and_residual(&c.forward_image, &target)?;
    let last = if cand_loss.is_finite() && cand_loss <= best_loss {
        x
    } else {
        best
    };
    if matched_error(clean, &last, &cfg.target)? < keep_err {
        keep = last;
    }
    let final_image = keep;

    let (final_qp, _) = resolve(&final_image, &cfg.target)?;
    let final_target = supervision_image(clean, final_qp, cfg.supervision)?;
    let (proxy_out, _) = crate::proxy::proxy_forward_at(&final_image, final_qp)?;
    let (hard_out, _) = refcodec::round_trip(&final_image, final_qp)?;
    let (final_proxy_loss, _) = loss_and_residual(&proxy_out, &final_target)?;
    let (final_hard_loss, _) = loss_and_residual(&hard_out, &final_target)?;
    let evaluation = hard_evaluate(clean, &final_image, &cfg.target)?;

    Ok(OptimizeTrace {
        losses,
        best_losses,
        qps,
        step_sizes,
        qp_changes,
        final_image,
        final_proxy_loss,
        final_hard_loss,
        evaluation,
    })
}

/// Hard-codec MSE against the clean image at the QP `x` itself resolves to.
fn matched_error(clean: &PlanarImage, x: &PlanarImage, target: &CodecCondition) -> Result<f64, OptimizeError> {
    let (qp, _) = resolve(x, target)?;
    let (decoded, _) = refcodec::round_trip(x, qp)?;
    Ok(metrics::mse(clean, &decoded)?)
}

/// `x − step·g`, projected onto [0,1].
fn descend(x: &PlanarImage, g: &PlanarImage, step: f64) -> Result<PlanarImage, PixelError> {
    let planes = x
        .planes()
        .iter()
        .zip(g.planes())
        .map(|(p, q)| {
            let data = p
                .data()
                .iter()
                .zip(q.data())
                .map(|(v, d)| (v - step * d).clamp(0.0, 1.0))
                .collect();
            Plane::new(p.width(), p.height(), data)
        })
        .collect::<Result<Vec<_>, _>>()?;
    x.with_planes(planes)
}

/// One corpus image: id, clean X, and the optimizer's starting point.
#[derive(Clone, Debug)]
pub struct CorpusItem {
    pub id: String,
    pub clean: PlanarImage,
    pub input: PlanarImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub mode: Composition,
    pub supervision: Supervision,
    pub images: usize,
    pub mean_psnr: f64,
    pub mean_bpp: f64,
    pub mean_baseline_psnr: f64,
    pub mean_psnr_delta: f64,
}

impl AblationRow {
    /// Aggregate per-image (optimized, baseline) evaluations for one config.
    pub fn from_evaluations(cfg: &OptimizeConfig, evals: &[(HardEvaluation, HardEvaluation)]) -> Self {
        let n = evals.len() as f64;
        let mean = |f: &dyn Fn(&(HardEvaluation, HardEvaluation)) -> f64| evals.iter().map(f).sum::<f64>() / n;
        AblationRow {
            config: cfg.label(),
            mode: cfg.mode,
            supervision: cfg.supervision,
            images: evals.len(),
            mean_psnr: mean(&|e| e.0.psnr),
            mean_bpp: mean(&|e| e.0.bpp),
            mean_baseline_psnr: mean(&|e| e.1.psnr),
            mean_psnr_delta: mean(&|e| e.0.psnr - e.1.psnr),
        }
    }
}

pub fn check_grid(corpus_len: usize, grid_len: usize) -> Result<(), OptimizeError> {
    if grid_len < 2 {
        return Err(OptimizeError::GridTooSmall(grid_len));
    }
    if corpus_len == 0 {
        return Err(OptimizeError::EmptyCorpus);
    }
    Ok(())
}

/// Run every config on every image; one row per config, in grid order.
pub fn ablation_run(corpus: &[CorpusItem], grid: &[OptimizeConfig]) -> Result<Vec<AblationRow>, OptimizeError> {
    check_grid(corpus.len(), grid.len())?;
    let mut rows = Vec::with_capacity(grid.len());
    for cfg in grid {
        let mut evals = Vec::with_capacity(corpus.len());
        for item in corpus {
            let trace = optimize_preprocess(&item.clean, &item.input, cfg)?;
            let base = baseline(&item.clean, &item.input, &cfg.target)?;
            evals.push((trace.evaluation, base));
        }
        rows.push(AblationRow::from_evaluations(cfg, &evals));
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("config,mode,supervision,images,mean_psnr,mean_bpp,mean_baseline_psnr,mean_psnr_delta\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            r.config, r.mode, r.supervision, r.images, r.mean_psnr, r.mean_bpp, r.mean_baseline_psnr, r.mean_psnr_delta
        );
    }
    s
}
