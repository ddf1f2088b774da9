//! `optimize`: per-image preprocessing runs plus the ablation grid.

use std::path::PathBuf;

use log::info;
use rayon::prelude::*;
use recompress_core::optimizer::{
    ablation_csv, baseline, check_grid, optimize_preprocess, AblationRow, HardEvaluation, OptimizeConfig,
    OptimizeTrace, Supervision, TraceSummary,
};
use recompress_core::proxy::Composition;
use serde::Serialize;

use crate::corpus::CorpusImage;
use crate::error::CliError;

pub struct OptimizeArgs {
    pub config: OptimizeConfig,
    pub out: PathBuf,
    pub ablation: bool,
}

#[derive(Serialize)]
struct ImageSummary<'a> {
    id: &'a str,
    #[serde(flatten)]
    summary: TraceSummary,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    config: String,
    target: &'a recompress_core::condition::CodecCondition,
    steps: usize,
    step_size: f64,
    images: Vec<ImageSummary<'a>>,
    mean_psnr_delta: f64,
    improved_or_tied: usize,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    ablation: Vec<AblationRow>,
}

/// The requested config first, then each single-axis variant of it.
pub fn grid_for(cfg: &OptimizeConfig) -> Vec<OptimizeConfig> {
    let mut ste = cfg.clone();
    ste.mode = match cfg.mode {
        Composition::NoSte => Composition::Ste,
        Composition::Ste => Composition::NoSte,
    };
    let mut sup = cfg.clone();
    sup.supervision = match cfg.supervision {
        Supervision::Clean => Supervision::SlightlyCompressed,
        Supervision::SlightlyCompressed => Supervision::Clean,
    };
    vec![cfg.clone(), ste, sup]
}

pub fn run(images: &[CorpusImage], args: &OptimizeArgs) -> Result<(), CliError> {
    args.config.validate()?;
    let grid = if args.ablation { grid_for(&args.config) } else { vec![args.config.clone()] };
    if args.ablation {
        check_grid(images.len(), grid.len())?;
    } else if images.is_empty() {
        return Err(recompress_core::optimizer::OptimizeError::EmptyCorpus.into());
    }
    std::fs::create_dir_all(&args.out)?;
    info!("optimize: {} images, {} configs", images.len(), grid.len());

    let baselines: Vec<HardEvaluation> = images
        .par_iter()
        .map(|im| baseline(&im.image, &im.image, &args.config.target))
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..images.len()).map(move |i| (g, i)))
        .collect();
    let traces: Vec<OptimizeTrace> = jobs
        .par_iter()
        .map(|&(g, i)| optimize_preprocess(&images[i].image, &images[i].image, &grid[g]))
        .collect::<Result<_, _>>()?;

    let n = images.len();
    for (im, t) in images.iter().zip(&traces[..n]) {
        std::fs::write(args.out.join(format!("{}.trace.csv", im.id)), t.to_csv())?;
    }
    let ablation: Vec<AblationRow> = if args.ablation {
        grid.iter()
            .enumerate()
            .map(|(g, cfg)| {
                let evals: Vec<_> = traces[g * n..(g + 1) * n]
                    .iter()
                    .zip(&baselines)
                    .map(|(t, b)| (t.evaluation.clone(), b.clone()))
                    .collect();
                AblationRow::from_evaluations(cfg, &evals)
            })
            .collect()
    } else {
        Vec::new()
    };
    if args.ablation {
        std::fs::write(args.out.join("ablation.csv"), ablation_csv(&ablation))?;
    }

    let per_image: Vec<ImageSummary> = images
        .iter()
        .zip(&traces[..n])
        .zip(&baselines)
        .map(|((im, t), b)| ImageSummary {
            id: &im.id,
            summary: t.summary(Some(b)),
        })
        .collect();
    let deltas: Vec<f64> = per_image.iter().filter_map(|s| s.summary.psnr_delta).collect();
    let summary = RunSummary {
        config: args.config.label(),
        target: &args.config.target,
        steps: args.config.steps,
        step_size: args.config.step_size,
        mean_psnr_delta: deltas.iter().sum::<f64>() / deltas.len() as f64,
        improved_or_tied: deltas.iter().filter(|d| **d >= 0.0).count(),
        images: per_image,
        ablation,
    };
    std::fs::write(args.out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    println!(
        "{}: mean PSNR delta {:+.4} dB, {}/{} images improved or tied; wrote {}",
        summary.config,
        summary.mean_psnr_delta,
        summary.improved_or_tied,
        n,
        args.out.display()
    );
    Ok(())
}
