//! `bdrate` and `ttest`.

use std::path::Path;

use recompress_core::bdstats::{bd_quality_with, bd_rate_with, paired_t_test, Interp, PairedSample, RdCurve, Summary};
use recompress_core::metrics::higher_is_better;
use recompress_core::report::{RdTable, RD_SCHEMA};
use serde::Serialize;

use crate::error::{read_text, CliError};

/// Inline `bpp:quality,bpp:quality,...`.
fn parse_inline(s: &str) -> Result<Vec<(f64, f64)>, CliError> {
    s.split(',')
        .map(|pair| {
            let (r, q) = pair
                .split_once(':')
                .ok_or_else(|| CliError::Usage(format!("expected bpp:quality, got {pair:?}")))?;
            let num = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Usage(format!("bad number {v:?} in {pair:?}")))
            };
            Ok((num(r)?, num(q)?))
        })
        .collect()
}

/// A curve source is either inline points or an RD CSV, whose MEAN rows
/// give one point per rate point.
fn load_points(src: &str, codec: Option<&str>, metric: &str) -> Result<Vec<(f64, f64)>, CliError> {
    if !Path::new(src).exists() && src.contains(':') {
        return parse_inline(src);
    }
    let table = RdTable::from_csv(&read_text(Path::new(src))?)?;
    let mut pts = table.mean_curve(codec, metric)?;
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pts)
}

fn orientation(metric: &str, flag: Option<bool>) -> Result<bool, CliError> {
    flag.or_else(|| higher_is_better(metric)).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown orientation for metric {metric:?}; pass --higher-is-better or --lower-is-better"
        ))
    })
}

pub struct BdArgs {
    pub anchor: String,
    pub test: String,
    pub metric: String,
    pub codec: Option<String>,
    pub test_codec: Option<String>,
    pub higher_is_better: Option<bool>,
    pub interp: Interp,
    pub json: bool,
}

#[derive(Serialize)]
struct BdReport<'a> {
    metric: &'a str,
    higher_is_better: bool,
    interp: Interp,
    bd_rate: f64,
    bd_quality: f64,
    anchor: &'a [(f64, f64)],
    test: &'a [(f64, f64)],
}

pub fn bdrate_cmd(args: &BdArgs) -> Result<(), CliError> {
    let hib = orientation(&args.metric, args.higher_is_better)?;
    let a = load_points(&args.anchor, args.codec.as_deref(), &args.metric)?;
    let t = load_points(&args.test, args.test_codec.as_deref().or(args.codec.as_deref()), &args.metric)?;
    let ca = RdCurve::new(a.clone(), hib)?;
    let ct = RdCurve::new(t.clone(), hib)?;
    let rate = bd_rate_with(&ca, &ct, args.interp)?;
    let quality = bd_quality_with(&ca, &ct, args.interp)?;
    if args.json {
        let r = BdReport {
            metric: &args.metric,
            higher_is_better: hib,
            interp: args.interp,
            bd_rate: rate,
            bd_quality: quality,
            anchor: &a,
            test: &t,
        };
        println!("{}", serde_json::to_string(&r)?);
    } else {
        println!("BD-rate ({}, {}): {:.4}%", args.interp, args.metric, rate);
        println!("BD-{}: {:.6}", args.metric, quality);
    }
    Ok(())
}

pub struct TTestArgs {
    pub a: String,
    pub b: String,
    pub metric: String,
    pub codec: Option<String>,
    pub target_bpp: Option<f64>,
    pub json: bool,
}

/// Per-image values from an RD CSV (successful data rows only) or from any
/// CSV with a header, keyed by `image_id` or the first column.
fn load_column(path: &str, args: &TTestArgs) -> Result<Vec<(String, f64)>, CliError> {
    let text = read_text(Path::new(path))?;
    if text.starts_with(RD_SCHEMA) {
        let table = RdTable::from_csv(&text)?;
        let mut out = Vec::new();
        for r in table.data_rows().filter(|r| r.is_ok()) {
            if args.codec.as_deref().is_some_and(|c| c != r.codec) {
                continue;
            }
            if args.target_bpp.is_some_and(|b| r.target_bpp != Some(b)) {
                continue;
            }
            let v = table
                .value(r, &args.metric)?
                .ok_or_else(|| CliError::Usage(format!("{path}: {} has no {} value", r.image_id, args.metric)))?;
            let key = match r.target_bpp {
                Some(b) => format!("{}/{}/{}", r.image_id, r.codec, b),
                None => format!("{}/{}/qp{}", r.image_id, r.codec, r.qp.unwrap_or(-1)),
            };
            out.push((key, v));
        }
        return Ok(out);
    }
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| CliError::Usage(format!("{path}: empty file")))?
        .split(',')
        .map(str::trim)
        .collect();
    let id_col = header.iter().position(|h| *h == "image_id").unwrap_or(0);
    let val_col = header
        .iter()
        .position(|h| *h == args.metric)
        .ok_or_else(|| CliError::Usage(format!("{path}: no column {:?}", args.metric)))?;
    lines
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').map(str::trim).collect();
            let bad = || CliError::Usage(format!("{path}: bad row {}: {l:?}", i + 2));
            let v = f.get(val_col).ok_or_else(bad)?.parse::<f64>().map_err(|_| bad())?;
            Ok((f.get(id_col).ok_or_else(bad)?.to_string(), v))
        })
        .collect()
}

#[derive(Serialize)]
struct TTestReport<'a> {
    metric: &'a str,
    n: usize,
    a: Summary,
    b: Summary,
    mean_diff: f64,
    sd_diff: f64,
    t: f64,
    p: f64,
}

pub fn ttest_cmd(args: &TTestArgs) -> Result<(), CliError> {
    let a = load_column(&args.a, args)?;
    let b = load_column(&args.b, args)?;
    let sample = PairedSample::from_keyed(&a, &b)?;
    let r = paired_t_test(&sample);
    let (sa, sb) = (Summary::of(sample.a())?, Summary::of(sample.b())?);
    if args.json {
        let rep = TTestReport {
            metric: &args.metric,
            n: r.n,
            a: sa,
            b: sb,
            mean_diff: r.mean_diff,
            sd_diff: r.sd_diff,
            t: r.t,
            p: r.p,
        };
        println!("{}", serde_json::to_string(&rep)?);
    } else {
        println!("n = {}", r.n);
        println!("A: {}", sa.format(4));
        println!("B: {}", sb.format(4));
        println!("t = {:.6}", r.t);
        println!("p = {:.6e}", r.p);
    }
    Ok(())
}
