//! `rd-run`: every image × codec × rate point, encoded, decoded and scored.

use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use recompress_core::extcodec::{run_encoder, run_external_metric, solve_external, CommandTemplate};
use recompress_core::metrics;
use recompress_core::pixel::PlanarImage;
use recompress_core::ratecontrol::solve_qp;
use recompress_core::refcodec::{round_trip, QuantParam};
use recompress_core::report::{RdRow, RdTable, STATUS_OK};
use serde::Serialize;

use crate::config::{CodecEntry, RatePoint, RunConfig};
use crate::corpus::{self, CorpusImage};
use crate::error::CliError;

struct Job<'a> {
    image: &'a CorpusImage,
    codec: &'a CodecEntry,
    point: RatePoint,
}

struct Encoded {
    decoded: PlanarImage,
    bits: u64,
    param: i64,
}

fn encode_point(img: &PlanarImage, codec: &CodecEntry, point: RatePoint, tol: f64) -> Result<Encoded, CliError> {
    match codec {
        CodecEntry::Reference => {
            let qp = match point {
                RatePoint::Bpp(b) => solve_qp(img, b, tol)?.qp(),
                RatePoint::Param(p) => QuantParam::new(p)?,
            };
            let (decoded, bits) = round_trip(img, qp)?;
            Ok(Encoded {
                decoded,
                bits,
                param: qp.value().into(),
            })
        }
        CodecEntry::External(spec) => {
            let param = match point {
                RatePoint::Bpp(b) => solve_external(spec, img, b, tol)?.param,
                RatePoint::Param(p) => p,
            };
            let r = run_encoder(spec, img, param)?;
            Ok(Encoded {
                decoded: r.decoded,
                bits: r.bits,
                param,
            })
        }
    }
}

fn run_job(job: &Job, cfg: &RunConfig, externals: &[CommandTemplate]) -> Result<RdRow, CliError> {
    let img = &job.image.image;
    let enc = encode_point(img, job.codec, job.point, cfg.tolerance)?;
    let mse = metrics::mse(img, &enc.decoded)?;
    let external = externals
        .iter()
        .map(|t| run_external_metric(t, img, &enc.decoded).map(Some))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RdRow {
        image_id: job.image.id.clone(),
        codec: job.codec.name().into(),
        target_bpp: target_of(job.point),
        achieved_bpp: Some(enc.bits as f64 / img.original_area() as f64),
        qp: Some(enc.param),
        psnr: Some(metrics::psnr_from_mse(mse)),
        ssim: Some(metrics::ssim(img, &enc.decoded)?),
        mse: Some(mse),
        external,
        status: STATUS_OK.into(),
    })
}

fn target_of(p: RatePoint) -> Option<f64> {
    match p {
        RatePoint::Bpp(b) => Some(b),
        RatePoint::Param(_) => None,
    }
}

#[derive(Serialize)]
struct GroupSummary<'a> {
    codec: &'a str,
    target_bpp: Option<f64>,
    param: Option<i64>,
    achieved_bpp: Option<f64>,
    psnr: Option<f64>,
    ssim: Option<f64>,
    mse: Option<f64>,
    external: std::collections::BTreeMap<&'a str, Option<f64>>,
    status: &'a str,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    schema: &'static str,
    images: usize,
    rows: usize,
    failures: usize,
    groups: Vec<GroupSummary<'a>>,
}

/// Build the full table. Row order depends only on the config and the
/// corpus, never on which worker finishes first.
pub fn build_table(cfg: &RunConfig, images: &[CorpusImage]) -> Result<RdTable, CliError> {
    let codecs = cfg.codec_entries()?;
    let points = cfg.points();
    let externals = cfg
        .external_metrics
        .iter()
        .map(|m| CommandTemplate::parse(&m.command))
        .collect::<Result<Vec<_>, _>>()?;
    let mut jobs = Vec::new();
    for codec in &codecs {
        for &point in &points {
            for image in images {
                jobs.push(Job { image, codec, point });
            }
        }
    }
    let rows: Vec<RdRow> = jobs
        .par_iter()
        .map(|job| {
            run_job(job, cfg, &externals).unwrap_or_else(|e| {
                warn!("{} / {} / {:?}: {e}", job.image.id, job.codec.name(), job.point);
                RdRow::failed(&job.image.id, job.codec.name(), target_of(job.point), externals.len(), &e.to_string())
            })
        })
        .collect();
    let mut table = RdTable::new(cfg.external_metrics.iter().map(|m| m.name.clone()).collect());
    let mut it = rows.into_iter();
    for codec in &codecs {
        for &point in &points {
            let group: Vec<RdRow> = it.by_ref().take(images.len()).collect();
            table.push_group(codec.name(), target_of(point), group);
        }
    }
    Ok(table)
}

pub fn run(cfg: &RunConfig, out_override: Option<&Path>) -> Result<(), CliError> {
    let out = out_override.unwrap_or(&cfg.output);
    std::fs::create_dir_all(out)?;
    let images = match (&cfg.corpus, &cfg.synthetic) {
        (Some(dir), _) => corpus::load_dir(dir)?,
        (None, Some(s)) => corpus::synthetic(s, cfg.seed)?,
        (None, None) => unreachable!("validated config has a corpus"),
    };
    if images.is_empty() {
        return Err(CliError::Usage("corpus contains no images".into()));
    }
    info!("rd-run: {} images, {} codecs, {} points", images.len(), cfg.codecs.len(), cfg.points().len());
    let table = build_table(cfg, &images)?;
    std::fs::write(out.join("rd.csv"), table.to_csv()?)?;

    let groups = table
        .mean_rows()
        .map(|r| GroupSummary {
            codec: &r.codec,
            target_bpp: r.target_bpp,
            param: r.qp,
            achieved_bpp: r.achieved_bpp,
            psnr: r.psnr,
            ssim: r.ssim,
            mse: r.mse,
            external: table.external_names.iter().map(String::as_str).zip(r.external.iter().copied()).collect(),
            status: &r.status,
        })
        .collect();
    let total = table.data_rows().count();
    let failed = table.failures();
    let summary = RunSummary {
        schema: "recompress-bench rd-json v1",
        images: images.len(),
        rows: total,
        failures: failed,
        groups,
    };
    std::fs::write(out.join("rd.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    println!("wrote {} rows to {}", total, out.join("rd.csv").display());
    if failed > 0 {
        return Err(CliError::Partial { failed, total });
    }
    Ok(())
}
